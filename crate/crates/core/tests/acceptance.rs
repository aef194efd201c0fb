//! End-to-end acceptance checks. Runs as a plain binary so that every
//! criterion prints one PASS/FAIL line; exits non-zero if any fails.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use tunebert::experiments::{
    fine_tune, run_finetune, run_grid, run_grid_experiment, run_multitask, split_validation, toy, write_dataset,
    Classifier, Dataset, EncodedExample, ExperimentConfig, MetricsLog, MetricsRecord, Split, TrainingRecipe,
    CURVES_FILE, GRID_FILE,
};
use tunebert::longtext::{TruncationKind, TruncationStrategy, LongTextStrategy};
use tunebert::model::{select_features, ClassifierHead, EncoderConfig, EncoderModel, LayerSelection, Mode};
use tunebert::multitask::{MixingStrategy, MultiTaskModel, MultiTaskTrainer, TaskData};
use tunebert::numeric::{grad_check, set_strict_deterministic, GradCheckConfig, ParamStore, Rng, Tape, Var};
use tunebert::optim::{
    effective_rate, AdamConfig, AdamState, LayerwiseLrSchedule, LayerwiseOptimizer, StlrSchedule,
};
use tunebert::pretrain::{
    apply_masking, evaluate_pretraining, further_pretrain, make_examples, pretrain_loss, MaskingPolicy,
    PretrainConfig, PretrainExample,
};
use tunebert::tokenizer::{build_vocab, encode, CLS_ID, MASK_ID, SEP_ID};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn toy_encoder(vocab: usize, max_len: usize) -> EncoderConfig {
    EncoderConfig {
        layers: 2,
        hidden: 8,
        heads: 2,
        ffn: 16,
        vocab_size: vocab,
        max_positions: max_len,
        dropout: 0.0,
        segment_types: 2,
        layer_norm_eps: 1e-5,
    }
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut m = EncoderModel::<f64>::new(toy_encoder(30, 16), &mut Rng::new(7)).map_err(e2s)?;
    let head = ClassifierHead::attach(&mut m, "toy", 8, 3, &mut Rng::new(8)).map_err(e2s)?;
    let mut r = Rng::new(9);
    for id in m.params.ids().collect::<Vec<_>>() {
        let p = m.params.get_mut(id);
        if !p.name.contains(".ln.") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.3 * r.normal());
        }
    }
    let a: Vec<u32> = (0..8).map(|i| 5 + (i * 7 % 25)).collect();
    let b: Vec<u32> = (0..5).map(|i| 6 + (i * 11 % 24)).collect();
    let full = encode(&a, Some(&b), 16).map_err(e2s)?;
    let short = encode(&b[..3], Some(&a[..4]), 16).map_err(e2s)?;
    let batch = [
        PretrainExample {
            labels: vec![(2, full.input_ids[2]), (9, full.input_ids[11]), (14, full.input_ids[14])],
            seq: full,
            is_next: true,
        },
        PretrainExample {
            labels: vec![(1, short.input_ids[1]), (6, short.input_ids[6])],
            seq: short,
            is_next: false,
        },
    ];
    let build = |t: &mut Tape<f64>, p: &ParamStore<f64>| -> tunebert::Result<Var> {
        let mm = m.with_params(p.clone());
        let refs: Vec<&PretrainExample> = batch.iter().collect();
        let pl = pretrain_loss(t, &mm, &refs, Mode::Eval, &mut Rng::new(0))?;
        let seqs: Vec<_> = batch.iter().map(|e| &e.seq).collect();
        let out = mm.forward(t, &seqs, Mode::Eval, &mut Rng::new(0))?;
        let f = select_features(t, &out, &LayerSelection::top())?;
        let logits = head.logits(t, &mm, f)?;
        let ce = t.cross_entropy(logits, &[2, 1])?;
        t.add(pl.total, ce)
    };
    let cfg = GradCheckConfig {
        step: 2e-5,
        samples_per_tensor: 200,
        seed: 0,
        abs_floor: 1e-4,
    };
    let report = grad_check(build, &m.params, &cfg).map_err(e2s)?;
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "max rel err {:.2e} over {} coordinates in {} tensors, {secs:.1}s",
        report.max_rel_error,
        report.coordinates,
        m.params.len()
    );
    check(report.max_rel_error < 1e-6, format!("{detail}; worst {:?}", report.worst))?;
    check(secs < 60.0, detail.clone())?;
    Ok(detail)
}

fn layerwise_decay() -> Outcome {
    let eps = f64::EPSILON;
    let mut worst: f64 = 0.0;
    for &xi in &[0.85, 0.90, 0.95, 1.00] {
        for layers in [2usize, 12] {
            let lw = LayerwiseLrSchedule::new(2e-5, xi, layers).map_err(e2s)?;
            let sched = StlrSchedule::new(1000, 0.1, 2e-5).map_err(e2s)?;
            for step in [1, 50, 100, 101, 555, 999] {
                for d in 0..=layers {
                    let lo = effective_rate(d, &lw, &sched, step);
                    let hi = effective_rate(d + 1, &lw, &sched, step);
                    let rel = (lo / hi - xi).abs() / xi;
                    worst = worst.max(rel);
                    check(rel <= 4.0 * eps, format!("xi={xi} L={layers} depth {d}->{}: ratio {}", d + 1, lo / hi))?;
                }
            }
        }
    }

    // Decay 1 against plain Adam under the same schedule.
    let cfg = toy_encoder(30, 16);
    let base = EncoderModel::<f32>::new(cfg, &mut Rng::new(5)).map_err(e2s)?;
    let seqs = [encode(&[5, 6, 7, 8, 9], None, 16).map_err(e2s)?, encode(&[10, 11], Some(&[12]), 16).map_err(e2s)?];
    let (total, warmup, peak) = (20, 0.1, 1e-3);
    let loss_of = |m: &EncoderModel<f32>, t: &mut Tape<f32>| -> tunebert::Result<Var> {
        let refs: Vec<_> = seqs.iter().collect();
        let out = m.forward(t, &refs, Mode::Eval, &mut Rng::new(0))?;
        let top = out.top();
        let sq = t.mul(top, top)?;
        Ok(t.sum(sq))
    };
    let mut a = base.clone();
    let mut b = base.clone();
    let lw = LayerwiseLrSchedule::new(peak, 1.0, cfg_layers(&base)).map_err(e2s)?;
    let sched = StlrSchedule::new(total, warmup, peak).map_err(e2s)?;
    let mut opt = LayerwiseOptimizer::new(&a.params, lw, sched, AdamConfig::default());
    let mut plain = AdamState::new(AdamConfig::default());
    for step in 1..=total {
        for (m, which) in [(&mut a, 0), (&mut b, 1)] {
            let mut t = Tape::new();
            let l = loss_of(m, &mut t).map_err(e2s)?;
            m.params.zero_grads();
            t.backward(l, &mut m.params).map_err(e2s)?;
            if which == 0 {
                opt.step(&mut m.params, None).map_err(e2s)?;
            } else {
                let rate = sched.rate(step);
                plain.step(&mut m.params, None, |_| rate).map_err(e2s)?;
            }
        }
    }
    let bits = |m: &EncoderModel<f32>| -> Vec<u32> {
        m.params.iter().flat_map(|(_, p)| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
    };
    check(bits(&a) != bits(&base), "training did not move the parameters")?;
    check(bits(&a) == bits(&b), "decay 1 differs from plain Adam")?;
    Ok(format!(
        "adjacent ratios within {:.1} ulp for xi in {{0.85,0.9,0.95,1}}; decay 1 bitwise equal to plain Adam over {total} steps",
        worst / eps
    ))
}

fn cfg_layers(m: &EncoderModel<f32>) -> usize {
    m.config.layers
}

fn stlr_golden() -> Outcome {
    for total in [1000usize, 20_000, 100_000] {
        let s = StlrSchedule::new(total, 0.1, 2e-5).map_err(e2s)?;
        let cases = [(0, 0.0), (total / 10, 2e-5), (total, 0.0), (total / 20, 1e-5)];
        for (step, want) in cases {
            let got = s.rate(step);
            check(got == want, format!("T={total}: rate({step}) = {got:e}, want {want:e}"))?;
        }
    }
    Ok("rate(0)=0, rate(0.1T)=2e-5, rate(T)=0, rate(0.05T)=1e-5 exactly for T in {1e3, 2e4, 1e5}".into())
}

fn truncation_sweep() -> Outcome {
    let start = Instant::now();
    let kinds = [TruncationKind::HeadOnly, TruncationKind::TailOnly, TruncationKind::HeadTail];
    let full: Vec<u32> = (0..2000).collect();
    for len in 0..2000usize {
        let tokens = &full[..len];
        for kind in kinds {
            let out = TruncationStrategy::new(kind).apply(tokens);
            check(out.len() <= 510, format!("{kind:?} len {len} -> {}", out.len()))?;
            if len <= 510 {
                check(out == tokens, format!("{kind:?} changed an input of length {len}"))?;
                continue;
            }
            let want: Vec<u32> = match kind {
                TruncationKind::HeadOnly => tokens[..510].to_vec(),
                TruncationKind::TailOnly => tokens[len - 510..].to_vec(),
                TruncationKind::HeadTail => tokens[..128].iter().chain(&tokens[len - 382..]).copied().collect(),
            };
            check(out == want, format!("{kind:?} len {len} wrong tokens"))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(secs < 5.0, format!("took {secs:.2}s"))?;
    Ok(format!("lengths 0..2000 x 3 strategies, {secs:.2}s"))
}

fn masking_statistics() -> Outcome {
    let vocab = 1000usize;
    let policy = MaskingPolicy::default();
    let mut rng = Rng::new(21);
    let (mut content, mut corrupted, mut masked, mut random, mut kept) = (0usize, 0usize, 0usize, 0usize, 0usize);
    while content < 120_000 {
        let la = 1 + rng.below(60);
        let lb = 1 + rng.below(60);
        let a: Vec<u32> = (0..la).map(|_| 5 + rng.below(vocab - 5) as u32).collect();
        let b: Vec<u32> = (0..lb).map(|_| 5 + rng.below(vocab - 5) as u32).collect();
        let seq = encode(&a, Some(&b), 128).map_err(e2s)?;
        let ex = apply_masking(&seq, &policy, vocab, &mut rng);
        content += la + lb;
        for (i, &id) in seq.input_ids.iter().enumerate() {
            if id == CLS_ID || id == SEP_ID || seq.attention_mask[i] == 0 {
                check(ex.seq.input_ids[i] == id, format!("special/pad position {i} corrupted"))?;
                check(ex.labels.iter().all(|&(p, _)| p != i), format!("special/pad position {i} labeled"))?;
            }
        }
        for &(p, orig) in &ex.labels {
            corrupted += 1;
            let now = ex.seq.input_ids[p];
            if now == MASK_ID {
                masked += 1;
            } else if now != orig {
                random += 1;
            } else {
                kept += 1;
            }
        }
    }
    let rate = corrupted as f64 / content as f64;
    let share = |n: usize| n as f64 / corrupted as f64;
    check((rate - 0.15).abs() <= 0.005, format!("corruption rate {rate:.4}"))?;
    check((share(masked) - 0.8).abs() <= 0.02, format!("[MASK] share {:.4}", share(masked)))?;
    check((share(random) - 0.1).abs() <= 0.02, format!("random share {:.4}", share(random)))?;
    check((share(kept) - 0.1).abs() <= 0.02, format!("keep share {:.4}", share(kept)))?;

    let corpus = toy::pretrain_corpus(300, 4);
    let sents: Vec<&str> = corpus.documents.iter().flatten().map(String::as_str).collect();
    let v = build_vocab(&sents, 100).map_err(e2s)?;
    let tc = corpus.tokenize(&v);
    let pairs = make_examples(&tc, 0, 10_000, 9, 64, &policy, v.len()).map_err(e2s)?;
    let next = pairs.iter().filter(|e| e.is_next).count() as f64 / pairs.len() as f64;
    check((next - 0.5).abs() <= 0.02, format!("is-next share {next:.4}"))?;
    Ok(format!(
        "{content} tokens: rate {rate:.4}, mask/random/keep {:.3}/{:.3}/{:.3}; is-next {next:.4} over 10k pairs",
        share(masked),
        share(random),
        share(kept)
    ))
}

fn encoded(examples: &[tunebert::experiments::Example], v: &tunebert::tokenizer::Vocabulary) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|e| EncodedExample {
            ids: tunebert::tokenizer::tokenize_ids(&e.text, v),
            label: e.label,
        })
        .collect()
}

fn multitask_isolation() -> Outcome {
    let raw: Vec<_> = (0..3).map(|i| toy::marker_order(60 + 30 * i, 30 + i as u64)).collect();
    let texts: Vec<&str> = raw.iter().flatten().map(|e| e.text.as_str()).collect();
    let v = build_vocab(&texts, 80).map_err(e2s)?;
    let cfg = EncoderConfig {
        hidden: 16,
        ffn: 32,
        max_positions: 32,
        dropout: 0.1,
        ..toy_encoder(v.len(), 32)
    };
    let model = EncoderModel::new(cfg, &mut Rng::new(1)).map_err(e2s)?;
    let names = ["t0", "t1", "t2"];
    let task_classes: Vec<(&str, usize)> = names.iter().map(|n| (*n, 2)).collect();
    let mut mt = MultiTaskModel::attach(model, &task_classes, LongTextStrategy::HeadTail, LayerSelection::top(), &mut Rng::new(2))
        .map_err(e2s)?;
    let tasks: Vec<TaskData> = names
        .iter()
        .zip(&raw)
        .map(|(n, ex)| TaskData {
            name: n.to_string(),
            train: encoded(ex, &v),
            validation: Vec::new(),
        })
        .collect();
    let recipe = TrainingRecipe {
        base_lr: 1e-3,
        batch_size: 8,
        epochs: 20,
        train_steps: Some(150),
        ..Default::default()
    };
    let mut tr = MultiTaskTrainer::new(&mut mt, &tasks, &recipe, MixingStrategy { seed: 3, ..Default::default() }, 4)
        .map_err(e2s)?;
    let shared = mt.shared();
    let head_bits = |mt: &MultiTaskModel, n: &str| -> Vec<u32> {
        let h = mt.head(n).expect("head");
        [h.weight, h.bias]
            .iter()
            .flat_map(|&id| mt.model.params.value(id).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let enc_bits = |mt: &MultiTaskModel| -> Vec<u32> {
        let mut ids: Vec<_> = shared.iter().copied().collect();
        ids.sort_by_key(|id| id.0);
        ids.iter()
            .flat_map(|&id| mt.model.params.value(id).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
            .collect()
    };
    let mut counts = [0usize; 3];
    for step in 0..100 {
        let heads: Vec<_> = names.iter().map(|n| head_bits(&mt, n)).collect();
        let enc = enc_bits(&mt);
        let s = tr.step(&mut mt).map_err(e2s)?;
        check(s.loss.is_some(), format!("step {step} diverged"))?;
        counts[s.task] += 1;
        for (i, n) in names.iter().enumerate() {
            if i != s.task {
                check(head_bits(&mt, n) == heads[i], format!("step {step} on {}: head {n} changed", names[s.task]))?;
            }
        }
        check(head_bits(&mt, names[s.task]) != heads[s.task], format!("step {step}: active head unchanged"))?;
        check(enc_bits(&mt) != enc, format!("step {step}: shared encoder unchanged"))?;
    }
    Ok(format!("100 steps (task counts {counts:?}): inactive heads bitwise unchanged, encoder always updated"))
}

fn marker_finetune() -> Outcome {
    let start = Instant::now();
    let seed = 1;
    let train = toy::marker_order(2000, seed);
    let test = toy::marker_order(500, seed + 100);
    let texts: Vec<&str> = train.iter().map(|e| e.text.as_str()).collect();
    let vocab = build_vocab(&texts, 120).map_err(e2s)?;
    let ds = Dataset::new("marker", train, 2, Split::Train).map_err(e2s)?;
    let (tr, va) = split_validation(&ds, 0.1, seed).map_err(e2s)?;
    let (tr, va) = (tr.encode(&vocab), va.encode(&vocab));
    let te = encoded(&test, &vocab);
    let model = EncoderModel::new(EncoderConfig::desk(vocab.len()), &mut Rng::new(seed)).map_err(e2s)?;
    let mut clf = Classifier::attach(
        model,
        "marker",
        2,
        LongTextStrategy::HeadTail,
        LayerSelection::top(),
        &mut Rng::new(seed + 1),
    )
    .map_err(e2s)?;
    let recipe = TrainingRecipe {
        base_lr: 1e-3,
        batch_size: 8,
        epochs: 4,
        dropout: 0.1,
        eval_train: false,
        ..Default::default()
    };
    let mut log = MetricsLog::new();
    let out = fine_tune(&mut clf, &tr, &va, Some(&te), &recipe, seed, "marker", &mut log).map_err(e2s)?;
    let secs = start.elapsed().as_secs_f64();
    let err = out.test_error.unwrap_or(100.0);
    let detail = format!(
        "test error {err:.2}% after {} steps (best epoch {:?}), {secs:.0}s",
        out.steps, out.best_epoch
    );
    check(out.steps <= 2000, detail.clone())?;
    check(err <= 5.0, detail.clone())?;
    check(secs < 300.0, detail.clone())?;
    Ok(detail)
}

fn pretraining_benefit() -> Outcome {
    let mut lines = Vec::new();
    for seed in 1..=3u64 {
        let start = Instant::now();
        let corpus = toy::pretrain_corpus(400, seed);
        let sents: Vec<&str> = corpus.documents.iter().flatten().map(String::as_str).collect();
        let vocab = build_vocab(&sents, 100).map_err(e2s)?;
        let mut tc = corpus.tokenize(&vocab);
        let held = tc.split_off(50);
        let policy = MaskingPolicy::default();
        let max_len = 48;
        let eval_set = make_examples(&held, 0, 400, seed + 7, max_len, &policy, vocab.len()).map_err(e2s)?;
        let mut cfg = EncoderConfig::desk(vocab.len());
        cfg.max_positions = 64;
        let mut m = EncoderModel::<f32>::new(cfg, &mut Rng::new(seed)).map_err(e2s)?;
        let before = evaluate_pretraining(&m, &eval_set, 50).map_err(e2s)?;
        let reference = (vocab.len() as f64).ln() + 2f64.ln();
        let init_gap = (before.joint() - reference).abs() / reference;
        let pc = PretrainConfig {
            steps: 1000,
            batch_size: 8,
            max_len,
            learning_rate: 1e-3,
            seed,
            ..Default::default()
        };
        further_pretrain(&mut m, &tc, &pc, |_, _| Ok(())).map_err(e2s)?;
        let after = evaluate_pretraining(&m, &eval_set, 50).map_err(e2s)?;
        let drop = 1.0 - after.mlm / before.mlm;
        let line = format!(
            "seed {seed}: init {:.3} vs ln V + ln 2 = {reference:.3} ({:.1}%), held-out MLM {:.3} -> {:.3} (-{:.0}%), {:.0}s",
            before.joint(),
            100.0 * init_gap,
            before.mlm,
            after.mlm,
            100.0 * drop,
            start.elapsed().as_secs_f64()
        );
        check(init_gap <= 0.05, line.clone())?;
        check(drop >= 0.20, line.clone())?;
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn write_toy_task(dir: &Path, n: usize, seed: u64) -> Result<(), String> {
    write_dataset(dir.join("train.csv"), &toy::marker_order(n, seed)).map_err(e2s)?;
    write_dataset(dir.join("test.csv"), &toy::marker_order(n / 3, seed + 1)).map_err(e2s)?;
    write_dataset(dir.join("aux.csv"), &toy::marker_order(n / 2, seed + 2)).map_err(e2s)?;
    Ok(())
}

const SMALL_MODEL: &str = "[model]\nlayers = 2\nhidden = 16\nheads = 2\nffn = 32\nmax_positions = 40\n";

fn dir_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(e2s)? {
        let e = e.map_err(e2s)?;
        out.insert(e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).map_err(e2s)?);
    }
    Ok(out)
}

fn determinism() -> Outcome {
    set_strict_deterministic(true);
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let dir = tmp.path();
    write_toy_task(dir, 150, 40)?;
    let text = format!(
        r#"name = "det"
seed = 17
{SMALL_MODEL}
[vocab]
size = 70

[data]
name = "marker"
train = "train.csv"
test = "test.csv"
num_classes = 2

[recipe]
base_lr = 2e-3
decay_factor = 0.95
epochs = 2
batch_size = 16
dropout = 0.1

[pretrain]
steps = 12
checkpoint_every = 5
batch_size = 8
max_len = 40
learning_rate = 1e-3

[multitask]
refine = true
tasks = [
  {{ name = "a", train = "train.csv", test = "test.csv", num_classes = 2 }},
  {{ name = "b", train = "aux.csv", num_classes = 2 }},
]
"#
    );
    fs::write(dir.join("exp.toml"), text).map_err(e2s)?;
    let cfg = ExperimentConfig::load(dir.join("exp.toml")).map_err(e2s)?;
    let mut compared = 0;
    for label in ["finetune", "multitask"] {
        let (a, b) = (dir.join(format!("{label}-a")), dir.join(format!("{label}-b")));
        for out in [&a, &b] {
            if label == "finetune" {
                run_finetune(&cfg, out).map_err(e2s)?;
            } else {
                run_multitask(&cfg, out).map_err(e2s)?;
            }
        }
        let (fa, fb) = (dir_files(&a)?, dir_files(&b)?);
        check(fa.keys().eq(fb.keys()), format!("{label}: different file sets"))?;
        for (name, bytes) in &fa {
            check(fb[name] == *bytes, format!("{label}: {name} differs"))?;
        }
        compared += fa.len();
    }
    set_strict_deterministic(false);
    Ok(format!("{compared} output files (metrics, checkpoints, summaries) byte-identical across two runs"))
}

fn grid_harness() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let dir = tmp.path();
    write_toy_task(dir, 240, 50)?;
    let text = format!(
        r#"name = "grid"
seed = 5
{SMALL_MODEL}
[vocab]
size = 70

[data]
train = "train.csv"
test = "test.csv"
num_classes = 2

[recipe]
epochs = 3
batch_size = 16
dropout = 0.1

[grid]
learning_rates = [2.5e-5, 2e-5]
decay_factors = [1.0, 0.95, 0.90, 0.85]
sweep = [2e-5, 5e-5, 1e-4, 4e-4]
"#
    );
    fs::write(dir.join("exp.toml"), text).map_err(e2s)?;
    let cfg = ExperimentConfig::load(dir.join("exp.toml")).map_err(e2s)?;
    let out = dir.join("out");
    let summary = run_grid_experiment(&cfg, &out).map_err(e2s)?;

    let tsv = fs::read_to_string(out.join(GRID_FILE)).map_err(e2s)?;
    let rows: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    check(rows.len() == 9, format!("grid.tsv has {} lines", rows.len()))?;
    let mut cells = HashSet::new();
    for r in &rows[1..] {
        check(r.len() == 4 && r.iter().all(|c| !c.is_empty() && *c != "-"), format!("incomplete row {r:?}"))?;
        cells.insert((r[0].to_string(), r[1].to_string()));
    }
    check(cells.len() == 8, "grid cells not distinct")?;

    let curves = MetricsLog::parse(&fs::read_to_string(out.join(CURVES_FILE)).map_err(e2s)?).map_err(e2s)?;
    let mut series: BTreeMap<String, Vec<&MetricsRecord>> = BTreeMap::new();
    for r in &curves {
        series.entry(r.run.clone()).or_default().push(r);
    }
    check(series.len() == 4, format!("{} learning-curve series", series.len()))?;
    for (run, recs) in &series {
        for epoch in 1..=3 {
            for split in [Split::Train, Split::Test] {
                check(
                    recs.iter().any(|r| r.epoch == Some(epoch) && r.split == split && r.error_rate.is_some()),
                    format!("{run}: missing {split:?} error for epoch {epoch}"),
                )?;
            }
        }
    }
    check(summary.sweep.iter().all(|c| c.points.len() == 3), "sweep curves incomplete")?;

    let inputs = tunebert::experiments::prepare_grid(&cfg).map_err(e2s)?;
    let (bad, log) = run_grid(&cfg, &inputs, &[1e38, 2e-5], &[1.0, 0.9]).map_err(e2s)?;
    let diverged = bad.rows.iter().filter(|r| r.diverged).count();
    check(diverged == 2, format!("{diverged} of the 1e38 cells marked diverged"))?;
    check(bad.to_tsv().matches("diverged").count() == 4, "diverged cells not rendered")?;
    check(log.to_jsonl().is_ok(), "log with diverged runs not serializable")?;
    Ok(format!(
        "8-row TSV, 4 sweep series x 3 epochs of train/test error; lr 1e38 cells recorded as diverged ({} rows)",
        bad.rows.len()
    ))
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        ("gradient oracle", gradient_oracle),
        ("layer-wise decay", layerwise_decay),
        ("STLR golden values", stlr_golden),
        ("truncation sweep", truncation_sweep),
        ("masking statistics", masking_statistics),
        ("multi-task isolation", multitask_isolation),
        ("toy fine-tuning", marker_finetune),
        ("toy further pre-training", pretraining_benefit),
        ("determinism", determinism),
        ("grid harness", grid_harness),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|p| *p == n.to_string() || name.contains(p.as_str())) {
            continue;
        }
        let res = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match res {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
