use crate::error::{Error, Result};
use crate::numeric::{Checkpoint, Element, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::tokenizer::TokenizedSequence;

use super::config::EncoderConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub(crate) struct BlockParams {
    pub q_w: ParamId,
    pub q_b: ParamId,
    pub k_w: ParamId,
    pub k_b: ParamId,
    pub v_w: ParamId,
    pub v_b: ParamId,
    pub o_w: ParamId,
    pub o_b: ParamId,
    pub attn_ln_g: ParamId,
    pub attn_ln_b: ParamId,
    pub ffn_in_w: ParamId,
    pub ffn_in_b: ParamId,
    pub ffn_out_w: ParamId,
    pub ffn_out_b: ParamId,
    pub ffn_ln_g: ParamId,
    pub ffn_ln_b: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderParams {
    pub word: ParamId,
    pub position: ParamId,
    pub segment: ParamId,
    pub emb_ln_g: ParamId,
    pub emb_ln_b: ParamId,
    pub blocks: Vec<BlockParams>,
    pub mlm_w: ParamId,
    pub mlm_b: ParamId,
    pub mlm_ln_g: ParamId,
    pub mlm_ln_b: ParamId,
    pub mlm_bias: ParamId,
    pub nsp_w: ParamId,
    pub nsp_b: ParamId,
}

/// Mini-BERT: embeddings, `layers` transformer blocks, and the MLM and NSP
/// pre-training heads. Task heads are added to the same parameter store.
#[derive(Clone, Debug)]
pub struct EncoderModel<T = f32> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
    pub(crate) ids: EncoderParams,
}

/// Hidden states of one sequence: `layers + 1` tensors of shape `[seq × hidden]`,
/// index 0 being the embedding output and index `l` the output of block `l`.
#[derive(Clone, Debug)]
pub struct LayerOutputs<T = f32> {
    pub states: Vec<Tensor<T>>,
}

/// Tape handles for a batch forward pass. Each layer state is `[batch·seq × hidden]`
/// with example `b` occupying rows `b·seq .. (b+1)·seq`.
#[derive(Clone, Debug)]
pub struct BatchOutputs {
    pub layers: Vec<Var>,
    pub batch: usize,
    pub seq: usize,
    /// Attention probabilities `[seq × seq]` indexed `[layer][example][head]`.
    pub attention: Vec<Vec<Vec<Var>>>,
}

impl BatchOutputs {
    pub fn top(&self) -> Var {
        *self.layers.last().expect("at least the embedding layer")
    }

    /// Flat row index of each example's first ([CLS]) position.
    pub fn cls_rows(&self) -> Vec<usize> {
        (0..self.batch).map(|b| b * self.seq).collect()
    }
}

pub(crate) fn init_tensor<T: Element>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.truncated_normal(INIT_STD))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

impl<T: Element> EncoderModel<T> {
    /// Truncated-normal(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn new(config: EncoderConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let f = config.ffn;
        let mut ps = ParamStore::new();
        let w = |ps: &mut ParamStore<T>, name: String, shape: &[usize], rng: &mut Rng| {
            ps.insert(name, init_tensor(shape, rng))
        };
        let zeros = |ps: &mut ParamStore<T>, name: String, n: usize| ps.insert(name, Tensor::zeros(&[n]));
        let ones = |ps: &mut ParamStore<T>, name: String, n: usize| ps.insert(name, Tensor::full(&[n], T::one()));

        let word = w(&mut ps, "embeddings.word".into(), &[config.vocab_size, h], rng)?;
        let position = w(&mut ps, "embeddings.position".into(), &[config.max_positions, h], rng)?;
        let segment = w(&mut ps, "embeddings.segment".into(), &[config.segment_types, h], rng)?;
        let emb_ln_g = ones(&mut ps, "embeddings.ln.gamma".into(), h)?;
        let emb_ln_b = zeros(&mut ps, "embeddings.ln.beta".into(), h)?;

        let mut blocks = Vec::with_capacity(config.layers);
        for l in 1..=config.layers {
            let p = |s: &str| format!("layer.{l}.{s}");
            blocks.push(BlockParams {
                q_w: w(&mut ps, p("attn.query.weight"), &[h, h], rng)?,
                q_b: zeros(&mut ps, p("attn.query.bias"), h)?,
                k_w: w(&mut ps, p("attn.key.weight"), &[h, h], rng)?,
                k_b: zeros(&mut ps, p("attn.key.bias"), h)?,
                v_w: w(&mut ps, p("attn.value.weight"), &[h, h], rng)?,
                v_b: zeros(&mut ps, p("attn.value.bias"), h)?,
                o_w: w(&mut ps, p("attn.output.weight"), &[h, h], rng)?,
                o_b: zeros(&mut ps, p("attn.output.bias"), h)?,
                attn_ln_g: ones(&mut ps, p("attn.ln.gamma"), h)?,
                attn_ln_b: zeros(&mut ps, p("attn.ln.beta"), h)?,
                ffn_in_w: w(&mut ps, p("ffn.in.weight"), &[h, f], rng)?,
                ffn_in_b: zeros(&mut ps, p("ffn.in.bias"), f)?,
                ffn_out_w: w(&mut ps, p("ffn.out.weight"), &[f, h], rng)?,
                ffn_out_b: zeros(&mut ps, p("ffn.out.bias"), h)?,
                ffn_ln_g: ones(&mut ps, p("ffn.ln.gamma"), h)?,
                ffn_ln_b: zeros(&mut ps, p("ffn.ln.beta"), h)?,
            });
        }

        let mlm_w = w(&mut ps, "mlm.transform.weight".into(), &[h, h], rng)?;
        let mlm_b = zeros(&mut ps, "mlm.transform.bias".into(), h)?;
        let mlm_ln_g = ones(&mut ps, "mlm.ln.gamma".into(), h)?;
        let mlm_ln_b = zeros(&mut ps, "mlm.ln.beta".into(), h)?;
        let mlm_bias = zeros(&mut ps, "mlm.output.bias".into(), config.vocab_size)?;
        let nsp_w = w(&mut ps, "nsp.weight".into(), &[h, 2], rng)?;
        let nsp_b = zeros(&mut ps, "nsp.bias".into(), 2)?;

        Ok(Self {
            config,
            params: ps,
            ids: EncoderParams {
                word,
                position,
                segment,
                emb_ln_g,
                emb_ln_b,
                blocks,
                mlm_w,
                mlm_b,
                mlm_ln_g,
                mlm_ln_b,
                mlm_bias,
                nsp_w,
                nsp_b,
            },
        })
    }

    /// Rebinds the parameter handles against an existing store (e.g. after a cast).
    pub fn with_params<U: Element>(&self, params: ParamStore<U>) -> EncoderModel<U> {
        EncoderModel {
            config: self.config.clone(),
            params,
            ids: self.ids.clone(),
        }
    }

    pub fn cast<U: Element>(&self) -> EncoderModel<U> {
        self.with_params(self.params.cast())
    }

    pub fn word_embeddings(&self) -> ParamId {
        self.ids.word
    }

    /// Snapshot of every parameter, including attached heads, with the config in the header.
    pub fn to_checkpoint(&self, vocab_hash: Option<String>, step: u64, extra: serde_json::Value) -> Result<Checkpoint> {
        let mut c = Checkpoint::from_params(serde_json::to_value(&self.config)?, vocab_hash, step, &self.params);
        c.extra = extra;
        Ok(c)
    }

    /// Rebuilds a model from a checkpoint. Tensors beyond the encoder (task heads,
    /// combiners) are added to the store in checkpoint order.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: EncoderConfig = serde_json::from_value(ckpt.config.clone())?;
        let mut model = Self::new(config, &mut Rng::new(0))?;
        for (name, t) in &ckpt.tensors {
            if model.params.id(name).is_none() {
                model.params.insert(name.clone(), t.cast())?;
            }
        }
        ckpt.load_into(&mut model.params)?;
        Ok(model)
    }

    fn dropout(&self, tape: &mut Tape<T>, x: Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        let p = self.config.dropout;
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let shape = tape.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if rng.bernoulli(p) { T::zero() } else { keep })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        tape.mul(x, m)
    }

    fn linear(&self, tape: &mut Tape<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = tape.param(&self.params, w);
        let bv = tape.param(&self.params, b);
        let y = tape.matmul(x, wv)?;
        tape.add_row(y, bv)
    }

    fn layer_norm(&self, tape: &mut Tape<T>, x: Var, g: ParamId, b: ParamId) -> Result<Var> {
        let gv = tape.param(&self.params, g);
        let bv = tape.param(&self.params, b);
        tape.layer_norm(x, gv, bv, self.config.layer_norm_eps)
    }

    /// Forward pass over a batch. Sequences are cut to the longest real length
    /// in the batch; trailing padding never influences real positions.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        seqs: &[&TokenizedSequence],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<BatchOutputs> {
        if seqs.is_empty() {
            return Err(Error::Empty("batch".into()));
        }
        for s in seqs {
            if s.len() > self.config.max_positions {
                return Err(Error::SequenceTooLong {
                    len: s.len(),
                    max: self.config.max_positions,
                });
            }
        }
        let seq = seqs.iter().map(|s| s.real_len()).max().unwrap_or(1).max(1);
        let batch = seqs.len();
        let heads = self.config.heads;
        let dh = self.config.head_dim();

        let mut tok = Vec::with_capacity(batch * seq);
        let mut pos = Vec::with_capacity(batch * seq);
        let mut segs = Vec::with_capacity(batch * seq);
        for s in seqs {
            for i in 0..seq {
                tok.push(s.input_ids.get(i).copied().unwrap_or(0) as usize);
                pos.push(s.position_ids.get(i).copied().unwrap_or(i as u32) as usize);
                segs.push(s.segment_ids.get(i).copied().unwrap_or(0) as usize);
            }
        }
        if let Some(&bad) = tok.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Vocab(format!("token id {bad} outside vocabulary")));
        }

        let word = tape.param(&self.params, self.ids.word);
        let position = tape.param(&self.params, self.ids.position);
        let segment = tape.param(&self.params, self.ids.segment);
        let e_tok = tape.select_rows(word, &tok)?;
        let e_pos = tape.select_rows(position, &pos)?;
        let e_seg = tape.select_rows(segment, &segs)?;
        let x = tape.add(e_tok, e_pos)?;
        let x = tape.add(x, e_seg)?;
        let x = self.layer_norm(tape, x, self.ids.emb_ln_g, self.ids.emb_ln_b)?;
        let mut x = self.dropout(tape, x, mode, rng)?;

        // Additive key masks, one per example that has padding.
        let masks: Vec<Option<Var>> = seqs
            .iter()
            .map(|s| {
                let real = s.real_len();
                if real >= seq {
                    return None;
                }
                let mut m = Vec::with_capacity(seq * seq);
                for _ in 0..seq {
                    for j in 0..seq {
                        let open = s.attention_mask.get(j).copied().unwrap_or(0) == 1;
                        m.push(if open { T::zero() } else { T::neg_infinity() });
                    }
                }
                Some(tape.constant(Tensor::new(vec![seq, seq], m).expect("shape")))
            })
            .collect();

        let scale = 1.0 / (dh as f64).sqrt();
        let mut layers = vec![x];
        let mut attention = Vec::with_capacity(self.config.layers);
        for blk in &self.ids.blocks {
            let q = self.linear(tape, x, blk.q_w, blk.q_b)?;
            let k = self.linear(tape, x, blk.k_w, blk.k_b)?;
            let v = self.linear(tape, x, blk.v_w, blk.v_b)?;
            let mut ctx_rows = Vec::with_capacity(batch);
            let mut layer_attn = Vec::with_capacity(batch);
            for (b, mask) in masks.iter().enumerate() {
                let qb = tape.slice_rows(q, b * seq, seq)?;
                let kb = tape.slice_rows(k, b * seq, seq)?;
                let vb = tape.slice_rows(v, b * seq, seq)?;
                let mut heads_out = Vec::with_capacity(heads);
                let mut head_attn = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let qh = tape.slice_cols(qb, hd * dh, dh)?;
                    let kh = tape.slice_cols(kb, hd * dh, dh)?;
                    let vh = tape.slice_cols(vb, hd * dh, dh)?;
                    let scores = tape.matmul_nt(qh, kh)?;
                    let mut scores = tape.scale(scores, scale);
                    if let Some(m) = mask {
                        scores = tape.add(scores, *m)?;
                    }
                    let probs = tape.softmax(scores)?;
                    head_attn.push(probs);
                    let probs = self.dropout(tape, probs, mode, rng)?;
                    heads_out.push(tape.matmul(probs, vh)?);
                }
                layer_attn.push(head_attn);
                ctx_rows.push(if heads == 1 {
                    heads_out[0]
                } else {
                    tape.concat_cols(&heads_out)?
                });
            }
            attention.push(layer_attn);
            let ctx = if batch == 1 { ctx_rows[0] } else { tape.concat_rows(&ctx_rows)? };
            let attn_out = self.linear(tape, ctx, blk.o_w, blk.o_b)?;
            let attn_out = self.dropout(tape, attn_out, mode, rng)?;
            let res = tape.add(x, attn_out)?;
            let x1 = self.layer_norm(tape, res, blk.attn_ln_g, blk.attn_ln_b)?;

            let inner = self.linear(tape, x1, blk.ffn_in_w, blk.ffn_in_b)?;
            let inner = tape.gelu(inner);
            let ff = self.linear(tape, inner, blk.ffn_out_w, blk.ffn_out_b)?;
            let ff = self.dropout(tape, ff, mode, rng)?;
            let res = tape.add(x1, ff)?;
            x = self.layer_norm(tape, res, blk.ffn_ln_g, blk.ffn_ln_b)?;
            layers.push(x);
        }
        debug_assert_eq!(layers.len(), self.config.layers + 1);
        Ok(BatchOutputs {
            layers,
            batch,
            seq,
            attention,
        })
    }

    /// All `layers + 1` hidden states of a single sequence, padded to its full length
    /// with zero rows beyond the real positions.
    pub fn encode(&self, seq: &TokenizedSequence, mode: Mode, rng: &mut Rng) -> Result<LayerOutputs<T>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &[seq], mode, rng)?;
        let h = self.config.hidden;
        let full = seq.len().max(out.seq);
        let states = out
            .layers
            .iter()
            .map(|&v| {
                let mut data = tape.value(v).data().to_vec();
                data.resize(full * h, T::zero());
                Tensor::new(vec![full, h], data).expect("shape")
            })
            .collect();
        Ok(LayerOutputs { states })
    }

    /// MLM logits `[rows.len() × vocab]` at the given flat rows of the top layer.
    /// The output projection is the transposed word-embedding matrix.
    pub fn mlm_logits(&self, tape: &mut Tape<T>, out: &BatchOutputs, rows: &[usize]) -> Result<Var> {
        let top = tape.select_rows(out.top(), rows)?;
        let t = self.linear(tape, top, self.ids.mlm_w, self.ids.mlm_b)?;
        let t = tape.gelu(t);
        let t = self.layer_norm(tape, t, self.ids.mlm_ln_g, self.ids.mlm_ln_b)?;
        let word = tape.param(&self.params, self.ids.word);
        let logits = tape.matmul_nt(t, word)?;
        let bias = tape.param(&self.params, self.ids.mlm_bias);
        tape.add_row(logits, bias)
    }

    /// NSP logits `[batch × 2]` from each example's top-layer [CLS] state.
    pub fn nsp_logits(&self, tape: &mut Tape<T>, out: &BatchOutputs) -> Result<Var> {
        let cls = tape.select_rows(out.top(), &out.cls_rows())?;
        self.linear(tape, cls, self.ids.nsp_w, self.ids.nsp_b)
    }
}
