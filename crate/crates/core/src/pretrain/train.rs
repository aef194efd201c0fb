use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::corpus::TokenizedCorpus;
use super::examples::{make_examples, MaskingPolicy, PretrainExample};
use crate::error::{Error, Result};
use crate::model::{EncoderModel, Mode};
use crate::numeric::{Element, ParamId, Rng, Tape, Var};
use crate::optim::{AdamConfig, LayerwiseLrSchedule, LayerwiseOptimizer, StlrSchedule};

fn default_decay() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub learning_rate: f64,
    pub warmup_proportion: f64,
    /// Layer-wise decay during pre-training; 1 disables it.
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default)]
    pub mask: MaskingPolicy,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 100_000,
            batch_size: 32,
            max_len: 128,
            learning_rate: 5e-5,
            warmup_proportion: 0.1,
            decay_factor: 1.0,
            mask: MaskingPolicy::default(),
            checkpoint_every: None,
            clip_norm: None,
            seed: 0,
        }
    }
}

/// Graph handles for the joint objective on one batch.
#[derive(Clone, Copy, Debug)]
pub struct PretrainLoss {
    /// `mlm + nsp`, or `nsp` alone when no position in the batch is labeled.
    pub total: Var,
    pub mlm: Option<Var>,
    pub nsp: Var,
}

/// MLM cross-entropy averaged over labeled positions only, plus NSP cross-entropy.
pub fn pretrain_loss<T: Element>(
    tape: &mut Tape<T>,
    model: &EncoderModel<T>,
    batch: &[&PretrainExample],
    mode: Mode,
    rng: &mut Rng,
) -> Result<PretrainLoss> {
    let seqs: Vec<_> = batch.iter().map(|e| &e.seq).collect();
    let out = model.forward(tape, &seqs, mode, rng)?;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (b, e) in batch.iter().enumerate() {
        for &(pos, id) in &e.labels {
            rows.push(b * out.seq + pos);
            targets.push(id as usize);
        }
    }
    let mlm = if rows.is_empty() {
        None
    } else {
        let logits = model.mlm_logits(tape, &out, &rows)?;
        Some(tape.cross_entropy(logits, &targets)?)
    };
    let nsp_logits = model.nsp_logits(tape, &out)?;
    let nsp_targets: Vec<usize> = batch.iter().map(|e| usize::from(e.is_next)).collect();
    let nsp = tape.cross_entropy(nsp_logits, &nsp_targets)?;
    let total = match mlm {
        Some(m) => tape.add(m, nsp)?,
        None => nsp,
    };
    Ok(PretrainLoss { total, mlm, nsp })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainEval {
    /// Mean cross-entropy per labeled position.
    pub mlm: f64,
    pub nsp: f64,
    pub labeled: usize,
}

impl PretrainEval {
    pub fn joint(&self) -> f64 {
        self.mlm + self.nsp
    }
}

/// Dropout-free losses over fixed examples, batch by batch.
pub fn evaluate_pretraining<T: Element>(
    model: &EncoderModel<T>,
    examples: &[PretrainExample],
    batch_size: usize,
) -> Result<PretrainEval> {
    if examples.is_empty() {
        return Err(Error::Empty("evaluation examples".into()));
    }
    let (mut mlm_sum, mut nsp_sum, mut labeled) = (0.0, 0.0, 0usize);
    let mut rng = Rng::new(0);
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&PretrainExample> = chunk.iter().collect();
        let mut tape = Tape::new();
        let l = pretrain_loss(&mut tape, model, &refs, Mode::Eval, &mut rng)?;
        let n: usize = chunk.iter().map(|e| e.labels.len()).sum();
        if let Some(m) = l.mlm {
            mlm_sum += tape.value(m).data()[0].as_f64() * n as f64;
        }
        nsp_sum += tape.value(l.nsp).data()[0].as_f64() * chunk.len() as f64;
        labeled += n;
    }
    Ok(PretrainEval {
        mlm: if labeled == 0 { 0.0 } else { mlm_sum / labeled as f64 },
        nsp: nsp_sum / examples.len() as f64,
        labeled,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainStep {
    pub step: usize,
    pub loss: f64,
    pub mlm: Option<f64>,
    pub nsp: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: Vec<PretrainStep>,
    pub checkpoints: Vec<usize>,
}

/// Steps at which a run of `total` steps saves: every `every` steps and the last.
pub fn checkpoint_steps(total: usize, every: Option<usize>) -> Vec<usize> {
    let mut out: Vec<usize> = match every {
        Some(e) if e > 0 => (1..=total / e).map(|k| k * e).collect(),
        _ => Vec::new(),
    };
    if total > 0 && out.last() != Some(&total) {
        out.push(total);
    }
    out
}

/// Parameters trained by the joint objective: the encoder and the MLM/NSP heads.
pub fn pretraining_params<T: Element>(model: &EncoderModel<T>) -> HashSet<ParamId> {
    model
        .params
        .iter()
        .filter(|(_, p)| {
            ["embeddings.", "layer.", "mlm.", "nsp."]
                .iter()
                .any(|pre| p.name.starts_with(pre))
        })
        .map(|(id, _)| id)
        .collect()
}

/// Joint MLM + NSP training with fresh Adam state. `on_checkpoint` is called
/// at each step of [`checkpoint_steps`].
pub fn further_pretrain(
    model: &mut EncoderModel<f32>,
    corpus: &TokenizedCorpus,
    cfg: &PretrainConfig,
    mut on_checkpoint: impl FnMut(usize, &EncoderModel<f32>) -> Result<()>,
) -> Result<PretrainReport> {
    cfg.mask.validate()?;
    if cfg.batch_size == 0 || corpus.len() < cfg.batch_size {
        return Err(Error::Dataset(format!(
            "corpus of {} documents is smaller than one batch of {}",
            corpus.len(),
            cfg.batch_size
        )));
    }
    if cfg.max_len > model.config.max_positions {
        return Err(Error::SequenceTooLong {
            len: cfg.max_len,
            max: model.config.max_positions,
        });
    }
    let layerwise = LayerwiseLrSchedule::new(cfg.learning_rate, cfg.decay_factor, model.config.layers)?;
    let schedule = StlrSchedule::new(cfg.steps.max(1), cfg.warmup_proportion, cfg.learning_rate)?;
    let adam = AdamConfig {
        clip_norm: cfg.clip_norm,
        ..AdamConfig::default()
    };
    let mut opt = LayerwiseOptimizer::new(&model.params, layerwise, schedule, adam);
    let active = pretraining_params(model);
    let saves = checkpoint_steps(cfg.steps, cfg.checkpoint_every);
    let mut dropout_rng = Rng::new(cfg.seed).derive(u64::MAX);
    let mut report = PretrainReport::default();

    for step in 1..=cfg.steps {
        let start = ((step - 1) * cfg.batch_size) as u64;
        let batch = make_examples(
            corpus,
            start,
            cfg.batch_size,
            cfg.seed,
            cfg.max_len,
            &cfg.mask,
            model.config.vocab_size,
        )?;
        let refs: Vec<&PretrainExample> = batch.iter().collect();
        let mut tape = Tape::new();
        let loss = pretrain_loss(&mut tape, model, &refs, Mode::Train, &mut dropout_rng)?;
        let value = tape.value(loss.total).data()[0] as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("pre-training loss at step {step}")));
        }
        tape.backward(loss.total, &mut model.params)?;
        let lr = opt.step(&mut model.params, Some(&active))?;
        report.steps.push(PretrainStep {
            step,
            loss: value,
            mlm: loss.mlm.map(|m| tape.value(m).data()[0] as f64),
            nsp: tape.value(loss.nsp).data()[0] as f64,
            lr,
        });
        if saves.contains(&step) {
            on_checkpoint(step, model)?;
            report.checkpoints.push(step);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EncoderConfig;
    use crate::tokenizer::encode;

    #[test]
    fn cadence_includes_final_step() {
        assert_eq!(checkpoint_steps(350, Some(100)), vec![100, 200, 300, 350]);
        assert_eq!(checkpoint_steps(300, Some(100)), vec![100, 200, 300]);
        assert_eq!(checkpoint_steps(7, None), vec![7]);
        assert!(checkpoint_steps(0, Some(5)).is_empty());
    }

    fn toy_model(vocab: usize) -> EncoderModel<f64> {
        let cfg = EncoderConfig {
            layers: 1,
            hidden: 8,
            heads: 2,
            ffn: 16,
            vocab_size: vocab,
            max_positions: 16,
            dropout: 0.0,
            segment_types: 2,
            layer_norm_eps: 1e-5,
        };
        EncoderModel::new(cfg, &mut Rng::new(2)).unwrap()
    }

    fn example(labels: Vec<(usize, u32)>, is_next: bool) -> PretrainExample {
        let mut seq = encode(&[10, 11, 12], Some(&[13, 14]), 10).unwrap();
        for &(p, _) in &labels {
            seq.input_ids[p] = crate::tokenizer::MASK_ID;
        }
        PretrainExample { seq, labels, is_next }
    }

    #[test]
    fn mlm_loss_reads_only_labeled_positions() {
        let m = toy_model(30);
        let ex = [example(vec![(1, 10), (5, 13)], true), example(vec![(2, 11)], false)];
        let refs: Vec<&PretrainExample> = ex.iter().collect();
        let mut tape = Tape::new();
        let l = pretrain_loss(&mut tape, &m, &refs, Mode::Eval, &mut Rng::new(0)).unwrap();
        let got = tape.value(l.mlm.unwrap()).data()[0];

        // Oracle: logits at every position, cross-entropy taken by hand at labeled rows.
        let mut t2 = Tape::new();
        let seqs: Vec<_> = ex.iter().map(|e| &e.seq).collect();
        let out = m.forward(&mut t2, &seqs, Mode::Eval, &mut Rng::new(0)).unwrap();
        let all: Vec<usize> = (0..out.batch * out.seq).collect();
        let logits = m.mlm_logits(&mut t2, &out, &all).unwrap();
        let lv = t2.value(logits);
        let mut sum = 0.0;
        let mut n = 0.0;
        for (b, e) in ex.iter().enumerate() {
            for &(p, id) in &e.labels {
                let row = lv.row(b * out.seq + p);
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                sum += lse - row[id as usize];
                n += 1.0;
            }
        }
        assert!((got - sum / n).abs() < 1e-12);
        let total = tape.value(l.total).data()[0];
        let nsp = tape.value(l.nsp).data()[0];
        assert!((total - got - nsp).abs() < 1e-12);
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let v = 200;
        let m = toy_model(v);
        let ex: Vec<PretrainExample> = (0..8).map(|i| example(vec![(1, 10), (2, 11 + i)], i % 2 == 0)).collect();
        let e = evaluate_pretraining(&m, &ex, 4).unwrap();
        let expect = (v as f64).ln() + 2f64.ln();
        assert!((e.joint() - expect).abs() / expect < 0.05, "{e:?}");
        assert_eq!(e.labeled, 16);
    }

    #[test]
    fn small_corpus_is_error() {
        let mut m = EncoderModel::<f32>::new(EncoderConfig::desk(50), &mut Rng::new(0)).unwrap();
        let corpus = TokenizedCorpus {
            documents: vec![vec![vec![5, 6], vec![7]]; 3],
        };
        let cfg = PretrainConfig {
            steps: 2,
            batch_size: 4,
            max_len: 16,
            ..Default::default()
        };
        assert!(further_pretrain(&mut m, &corpus, &cfg, |_, _| Ok(())).is_err());
    }

    #[test]
    fn checkpoints_fire_on_cadence() {
        let mut cfg = EncoderConfig::desk(40);
        cfg.hidden = 16;
        cfg.ffn = 32;
        cfg.max_positions = 16;
        let mut m = EncoderModel::<f32>::new(cfg, &mut Rng::new(0)).unwrap();
        let corpus = TokenizedCorpus {
            documents: (0..6u32).map(|d| vec![vec![5 + d, 6], vec![7, 8 + d], vec![9]]).collect(),
        };
        let pc = PretrainConfig {
            steps: 7,
            batch_size: 2,
            max_len: 12,
            learning_rate: 1e-3,
            checkpoint_every: Some(3),
            ..Default::default()
        };
        let mut seen = Vec::new();
        let r = further_pretrain(&mut m, &corpus, &pc, |s, _| {
            seen.push(s);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![3, 6, 7]);
        assert_eq!(r.checkpoints, seen);
        assert_eq!(r.steps.len(), 7);
        assert!(r.steps.iter().all(|s| s.loss.is_finite()));
    }
}
