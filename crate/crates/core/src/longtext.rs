//! Documents longer than the encoder window: truncation to a single window, or
//! hierarchical encoding of consecutive fractions whose [CLS] states are pooled.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{init_tensor, select_features, EncoderModel, LayerSelection, Mode};
use crate::numeric::{Element, ParamId, Rng, Tape, Tensor, Var};
use crate::tokenizer::{encode, TokenizedSequence};

pub const DEFAULT_CAPACITY: usize = 510;
pub const DEFAULT_HEAD: usize = 128;
pub const DEFAULT_TAIL: usize = 382;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationKind {
    HeadOnly,
    TailOnly,
    HeadTail,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationStrategy {
    pub kind: TruncationKind,
    pub head: usize,
    pub tail: usize,
    pub capacity: usize,
}

impl TruncationStrategy {
    /// Full-size budgets: 510 content tokens, head+tail split 128/382.
    pub fn new(kind: TruncationKind) -> Self {
        Self {
            kind,
            head: DEFAULT_HEAD,
            tail: DEFAULT_TAIL,
            capacity: DEFAULT_CAPACITY,
        }
    }

    /// Budgets for a smaller window, keeping the 128:382 head/tail proportion.
    pub fn scaled(kind: TruncationKind, capacity: usize) -> Self {
        let head = (capacity * DEFAULT_HEAD + DEFAULT_CAPACITY / 2) / DEFAULT_CAPACITY;
        Self {
            kind,
            head,
            tail: capacity - head,
            capacity,
        }
    }

    pub fn with_budgets(kind: TruncationKind, head: usize, tail: usize) -> Result<Self> {
        let s = Self {
            kind,
            head,
            tail,
            capacity: head + tail,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == TruncationKind::HeadTail && self.head + self.tail != self.capacity {
            return Err(Error::InvalidConfig(format!(
                "head {} + tail {} must equal capacity {}",
                self.head, self.tail, self.capacity
            )));
        }
        Ok(())
    }

    pub fn apply<X: Clone>(&self, tokens: &[X]) -> Vec<X> {
        truncate(tokens, self)
    }
}

/// Cuts `tokens` to at most `strategy.capacity`; shorter inputs come back unchanged.
pub fn truncate<X: Clone>(tokens: &[X], strategy: &TruncationStrategy) -> Vec<X> {
    let n = tokens.len();
    let cap = strategy.capacity;
    if n <= cap {
        return tokens.to_vec();
    }
    match strategy.kind {
        TruncationKind::HeadOnly => tokens[..cap].to_vec(),
        TruncationKind::TailOnly => tokens[n - cap..].to_vec(),
        TruncationKind::HeadTail => {
            let mut out = Vec::with_capacity(cap);
            out.extend_from_slice(&tokens[..strategy.head]);
            out.extend_from_slice(&tokens[n - strategy.tail..]);
            out
        }
    }
}

/// A document split into `k = ceil(L / capacity)` consecutive fractions, each
/// wrapped as `[CLS] … [SEP]` and padded to `capacity + 2`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkedDocument {
    pub fractions: Vec<TokenizedSequence>,
}

impl ChunkedDocument {
    pub fn k(&self) -> usize {
        self.fractions.len()
    }

    /// Original token stream with specials and padding removed.
    pub fn flatten(&self) -> Vec<u32> {
        self.fractions.iter().flat_map(|f| f.content_ids()).collect()
    }
}

pub fn chunk(tokens: &[u32], capacity: usize) -> Result<ChunkedDocument> {
    if capacity == 0 {
        return Err(Error::InvalidConfig("chunk capacity must be positive".into()));
    }
    let fractions = if tokens.is_empty() {
        vec![encode(&[], None, capacity + 2)?]
    } else {
        tokens
            .chunks(capacity)
            .map(|c| encode(c, None, capacity + 2))
            .collect::<Result<_>>()?
    };
    Ok(ChunkedDocument { fractions })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerKind {
    Mean,
    Max,
    SelfAttention,
}

/// Pools `k × H` fraction representations into one `1 × H` vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FractionCombiner {
    pub kind: CombinerKind,
    pub width: usize,
    attn: Option<AttnParams>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct AttnParams {
    query: ParamId,
    key: ParamId,
    value: ParamId,
}

impl FractionCombiner {
    pub const QUERY: &'static str = "combiner.query";
    pub const KEY: &'static str = "combiner.key.weight";
    pub const VALUE: &'static str = "combiner.value.weight";

    /// Mean and max have no parameters; self-attention adds a query `[H × 1]`,
    /// a key projection and an identity-initialized value projection to the store.
    pub fn attach<T: Element>(
        kind: CombinerKind,
        model: &mut EncoderModel<T>,
        width: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let attn = match kind {
            CombinerKind::SelfAttention => Some(AttnParams {
                query: model.params.insert(Self::QUERY, init_tensor(&[width, 1], rng))?,
                key: model.params.insert(Self::KEY, init_tensor(&[width, width], rng))?,
                value: model.params.insert(Self::VALUE, Tensor::identity(width))?,
            }),
            _ => None,
        };
        Ok(Self { kind, width, attn })
    }

    /// Re-binds to parameters already in the store.
    pub fn find<T: Element>(kind: CombinerKind, model: &EncoderModel<T>) -> Result<Self> {
        let (attn, width) = match kind {
            CombinerKind::SelfAttention => {
                let query = model.params.expect_id(Self::QUERY)?;
                let width = model.params.value(query).shape()[0];
                let attn = AttnParams {
                    query,
                    key: model.params.expect_id(Self::KEY)?,
                    value: model.params.expect_id(Self::VALUE)?,
                };
                (Some(attn), width)
            }
            _ => (None, model.config.hidden),
        };
        Ok(Self { kind, width, attn })
    }

    /// Attention weights `[1 × k]` over the rows of `reps`; `None` for parameter-free pooling.
    pub fn weights<T: Element>(&self, tape: &mut Tape<T>, model: &EncoderModel<T>, reps: Var) -> Result<Option<Var>> {
        let Some(a) = &self.attn else { return Ok(None) };
        let k = tape.shape(reps)[0];
        let key_w = tape.param(&model.params, a.key);
        let q = tape.param(&model.params, a.query);
        let keys = tape.matmul(reps, key_w)?;
        let scores = tape.matmul(keys, q)?;
        let scores = tape.reshape(scores, &[1, k])?;
        let scores = tape.scale(scores, 1.0 / (self.width as f64).sqrt());
        Ok(Some(tape.softmax(scores)?))
    }

    pub fn combine<T: Element>(&self, tape: &mut Tape<T>, model: &EncoderModel<T>, reps: Var) -> Result<Var> {
        if tape.shape(reps).len() != 2 || tape.shape(reps)[1] != self.width || tape.shape(reps)[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "combine",
                lhs: tape.shape(reps).to_vec(),
                rhs: vec![0, self.width],
            });
        }
        match self.kind {
            CombinerKind::Mean => Ok(tape.mean_rows(reps)),
            CombinerKind::Max => Ok(tape.max_rows(reps)),
            CombinerKind::SelfAttention => {
                let w = self.weights(tape, model, reps)?.expect("attention parameters");
                let value_w = tape.param(&model.params, self.attn.as_ref().expect("attention parameters").value);
                let values = tape.matmul(reps, value_w)?;
                tape.matmul(w, values)
            }
        }
    }
}

/// The six document-handling choices selectable from configuration and the CLI.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LongTextStrategy {
    HeadOnly,
    TailOnly,
    #[default]
    HeadTail,
    HierMean,
    HierMax,
    HierAttn,
}

impl LongTextStrategy {
    pub const ALL: [LongTextStrategy; 6] = [
        Self::HeadOnly,
        Self::TailOnly,
        Self::HeadTail,
        Self::HierMean,
        Self::HierMax,
        Self::HierAttn,
    ];

    pub fn truncation(self) -> Option<TruncationKind> {
        match self {
            Self::HeadOnly => Some(TruncationKind::HeadOnly),
            Self::TailOnly => Some(TruncationKind::TailOnly),
            Self::HeadTail => Some(TruncationKind::HeadTail),
            _ => None,
        }
    }

    pub fn combiner(self) -> Option<CombinerKind> {
        match self {
            Self::HierMean => Some(CombinerKind::Mean),
            Self::HierMax => Some(CombinerKind::Max),
            Self::HierAttn => Some(CombinerKind::SelfAttention),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::HeadOnly => "head_only",
            Self::TailOnly => "tail_only",
            Self::HeadTail => "head_tail",
            Self::HierMean => "hier_mean",
            Self::HierMax => "hier_max",
            Self::HierAttn => "hier_attn",
        }
    }
}

/// How a model turns token streams of any length into [CLS] features.
#[derive(Clone, Debug)]
pub struct DocumentReader {
    pub strategy: LongTextStrategy,
    /// Content tokens per window (window length minus [CLS] and [SEP]).
    pub capacity: usize,
    pub truncation: Option<TruncationStrategy>,
    pub combiner: Option<FractionCombiner>,
    pub selection: LayerSelection,
}

impl DocumentReader {
    /// Sizes the window to the model and, for self-attention pooling, adds
    /// the combiner parameters to the model.
    pub fn attach<T: Element>(
        strategy: LongTextStrategy,
        selection: LayerSelection,
        model: &mut EncoderModel<T>,
        rng: &mut Rng,
    ) -> Result<Self> {
        let capacity = window_capacity(&model.config)?;
        let width = selection.width(model.config.layers, model.config.hidden)?;
        let combiner = strategy
            .combiner()
            .map(|k| FractionCombiner::attach(k, model, width, rng))
            .transpose()?;
        Ok(Self::assemble(strategy, selection, capacity, combiner))
    }

    /// Like [`attach`](Self::attach) but re-binds combiner parameters already in the model.
    pub fn find<T: Element>(strategy: LongTextStrategy, selection: LayerSelection, model: &EncoderModel<T>) -> Result<Self> {
        let capacity = window_capacity(&model.config)?;
        let combiner = match strategy.combiner() {
            Some(CombinerKind::SelfAttention) => Some(FractionCombiner::find(CombinerKind::SelfAttention, model)?),
            Some(k) => Some(FractionCombiner {
                kind: k,
                width: selection.width(model.config.layers, model.config.hidden)?,
                attn: None,
            }),
            None => None,
        };
        Ok(Self::assemble(strategy, selection, capacity, combiner))
    }

    fn assemble(
        strategy: LongTextStrategy,
        selection: LayerSelection,
        capacity: usize,
        combiner: Option<FractionCombiner>,
    ) -> Self {
        let truncation = strategy.truncation().map(|k| {
            if capacity == DEFAULT_CAPACITY {
                TruncationStrategy::new(k)
            } else {
                TruncationStrategy::scaled(k, capacity)
            }
        });
        Self {
            strategy,
            capacity,
            truncation,
            combiner,
            selection,
        }
    }

    /// Features `[docs × width]` for a batch of token streams.
    pub fn features<T: Element>(
        &self,
        tape: &mut Tape<T>,
        model: &EncoderModel<T>,
        docs: &[&[u32]],
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        if docs.is_empty() {
            return Err(Error::Empty("document batch".into()));
        }
        match (&self.truncation, &self.combiner) {
            (Some(t), _) => {
                let seqs = docs
                    .iter()
                    .map(|d| encode(&t.apply(d), None, self.capacity + 2))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&TokenizedSequence> = seqs.iter().collect();
                let out = model.forward(tape, &refs, mode, rng)?;
                select_features(tape, &out, &self.selection)
            }
            (None, Some(c)) => {
                let mut rows = Vec::with_capacity(docs.len());
                for d in docs {
                    let chunked = chunk(d, self.capacity)?;
                    let refs: Vec<&TokenizedSequence> = chunked.fractions.iter().collect();
                    let out = model.forward(tape, &refs, mode, rng)?;
                    let reps = select_features(tape, &out, &self.selection)?;
                    rows.push(c.combine(tape, model, reps)?);
                }
                if rows.len() == 1 {
                    Ok(rows[0])
                } else {
                    tape.concat_rows(&rows)
                }
            }
            (None, None) => unreachable!("every strategy truncates or combines"),
        }
    }
}

fn window_capacity(config: &crate::model::EncoderConfig) -> Result<usize> {
    let cap = config.max_positions.min(DEFAULT_CAPACITY + 2);
    if cap < 3 {
        return Err(Error::InvalidConfig("window too small for [CLS] and [SEP]".into()));
    }
    Ok(cap - 2)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    use super::*;
    use crate::model::EncoderConfig;
    use crate::tokenizer::{CLS_ID, PAD_ID, SEP_ID};

    fn stream(n: usize) -> Vec<u32> {
        (0..n as u32).map(|i| 5 + i).collect()
    }

    #[test]
    fn head_tail_keeps_first_128_and_last_382() {
        let t = stream(600);
        let out = truncate(&t, &TruncationStrategy::new(TruncationKind::HeadTail));
        let mut expect = t[..128].to_vec();
        expect.extend_from_slice(&t[218..]);
        assert_eq!(out, expect);
    }

    #[test]
    fn fitting_input_is_unchanged() {
        let t = stream(510);
        for k in [TruncationKind::HeadOnly, TruncationKind::TailOnly, TruncationKind::HeadTail] {
            assert_eq!(truncate(&t, &TruncationStrategy::new(k)), t);
        }
    }

    #[test]
    fn length_511_drops_index_128() {
        let t = stream(511);
        let out = truncate(&t, &TruncationStrategy::new(TruncationKind::HeadTail));
        let mut expect = t.clone();
        expect.remove(128);
        assert_eq!(out, expect);
    }

    #[test]
    fn head_and_tail_only() {
        let t = stream(700);
        assert_eq!(truncate(&t, &TruncationStrategy::new(TruncationKind::HeadOnly)), t[..510].to_vec());
        assert_eq!(truncate(&t, &TruncationStrategy::new(TruncationKind::TailOnly)), t[190..].to_vec());
    }

    #[test]
    fn budgets_must_sum_to_capacity() {
        let bad = TruncationStrategy {
            kind: TruncationKind::HeadTail,
            head: 100,
            tail: 100,
            capacity: 510,
        };
        assert!(bad.validate().is_err());
        assert_eq!(TruncationStrategy::with_budgets(TruncationKind::HeadTail, 3, 5).unwrap().capacity, 8);
        let s = TruncationStrategy::scaled(TruncationKind::HeadTail, 126);
        assert_eq!((s.head, s.tail), (32, 94));
    }

    #[test]
    fn exhaustive_length_sweep() {
        for k in [TruncationKind::HeadOnly, TruncationKind::TailOnly, TruncationKind::HeadTail] {
            let s = TruncationStrategy::new(k);
            for n in 0..2000 {
                let t = stream(n);
                let out = truncate(&t, &s);
                assert_eq!(out.len(), n.min(510), "{k:?} n={n}");
                assert!(is_subsequence(&out, &t));
            }
        }
    }

    fn is_subsequence(sub: &[u32], full: &[u32]) -> bool {
        let mut it = full.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    }

    #[test]
    fn chunk_counts() {
        assert_eq!(chunk(&stream(1020), 510).unwrap().k(), 2);
        let c = chunk(&stream(1021), 510).unwrap();
        assert_eq!(c.k(), 3);
        assert_eq!(c.fractions[2].content_ids().len(), 1);
        assert_eq!(chunk(&stream(10), 510).unwrap().k(), 1);
    }

    #[test]
    fn empty_document_is_one_empty_fraction() {
        let c = chunk(&[], 510).unwrap();
        assert_eq!(c.k(), 1);
        let f = &c.fractions[0];
        assert_eq!(&f.input_ids[..3], &[CLS_ID, SEP_ID, PAD_ID]);
        assert_eq!(f.len(), 512);
        assert!(c.flatten().is_empty());
    }

    proptest! {
        #[test]
        fn chunk_then_flatten_is_identity(n in 0usize..1600, cap in 1usize..600) {
            let t = stream(n);
            let c = chunk(&t, cap).unwrap();
            prop_assert_eq!(c.k(), n.div_ceil(cap).max(1));
            prop_assert!(c.fractions.iter().all(|f| f.len() == cap + 2));
            prop_assert_eq!(c.flatten(), t);
        }

        #[test]
        fn head_tail_is_ordered_subsequence(n in 0usize..3000, head in 0usize..300, tail in 0usize..300) {
            let s = TruncationStrategy::with_budgets(TruncationKind::HeadTail, head, tail).unwrap();
            let t = stream(n);
            let out = truncate(&t, &s);
            prop_assert!(out.len() <= s.capacity);
            prop_assert!(is_subsequence(&out, &t));
        }
    }

    fn toy_model() -> EncoderModel<f64> {
        let cfg = EncoderConfig {
            layers: 2,
            hidden: 4,
            heads: 2,
            ffn: 8,
            vocab_size: 40,
            max_positions: 12,
            dropout: 0.0,
            segment_types: 2,
            layer_norm_eps: 1e-5,
        };
        EncoderModel::new(cfg, &mut Rng::new(3)).unwrap()
    }

    fn pooled(kind: CombinerKind, rows: &[Vec<f64>]) -> Vec<f64> {
        let mut m = toy_model();
        let width = rows[0].len();
        let c = FractionCombiner::attach(kind, &mut m, width, &mut Rng::new(1)).unwrap();
        let mut tape = Tape::new();
        let reps = tape.constant(Tensor::from_rows(rows).unwrap());
        let out = c.combine(&mut tape, &m, reps).unwrap();
        assert_eq!(tape.shape(out), &[1, width]);
        tape.value(out).data().to_vec()
    }

    #[test]
    fn mean_and_max_examples() {
        let rows = vec![vec![1.0, 3.0], vec![3.0, 1.0]];
        assert_eq!(pooled(CombinerKind::Mean, &rows), vec![2.0, 2.0]);
        assert_eq!(pooled(CombinerKind::Max, &rows), vec![3.0, 3.0]);
    }

    #[test]
    fn single_fraction_passes_through() {
        let row = vec![vec![0.5, -1.25, 2.0, 0.0]];
        for k in [CombinerKind::Mean, CombinerKind::Max, CombinerKind::SelfAttention] {
            let out = pooled(k, &row);
            for (a, b) in out.iter().zip(&row[0]) {
                assert!((a - b).abs() < 1e-12, "{k:?}");
            }
        }
    }

    #[test]
    fn attention_weights_sum_to_one() {
        let mut m = toy_model();
        let c = FractionCombiner::attach(CombinerKind::SelfAttention, &mut m, 4, &mut Rng::new(2)).unwrap();
        let mut r = Rng::new(9);
        for k in 1..8 {
            let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..4).map(|_| r.normal() * 3.0).collect()).collect();
            let mut tape = Tape::new();
            let reps = tape.constant(Tensor::from_rows(&rows).unwrap());
            let w = c.weights(&mut tape, &m, reps).unwrap().unwrap();
            let s: f64 = tape.value(w).data().iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert_eq!(tape.shape(w), &[1, k]);
        }
    }

    proptest! {
        #[test]
        fn mean_max_permutation_invariant(vals in prop::collection::vec(-5.0f64..5.0, 3 * 4), seed in 0u64..100) {
            let rows: Vec<Vec<f64>> = vals.chunks(4).map(<[f64]>::to_vec).collect();
            let mut perm = rows.clone();
            Rng::new(seed).shuffle(&mut perm);
            for k in [CombinerKind::Mean, CombinerKind::Max] {
                let a = pooled(k, &rows);
                let b = pooled(k, &perm);
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn reader_outputs_one_row_per_document() {
        for strategy in LongTextStrategy::ALL {
            let mut m = toy_model();
            let reader = DocumentReader::attach(strategy, LayerSelection::top(), &mut m, &mut Rng::new(4)).unwrap();
            assert_eq!(reader.capacity, 10);
            let docs: Vec<Vec<u32>> = vec![stream(3), stream(25), vec![]];
            let refs: Vec<&[u32]> = docs.iter().map(Vec::as_slice).collect();
            let mut tape = Tape::new();
            let f = reader.features(&mut tape, &m, &refs, Mode::Eval, &mut Rng::new(0)).unwrap();
            assert_eq!(tape.shape(f), &[3, 4], "{strategy:?}");
            assert!(tape.value(f).all_finite());
        }
    }

    #[test]
    fn hierarchical_gradients_reach_every_fraction() {
        use crate::numeric::gradcheck::{grad_check, GradCheckConfig};
        let mut m = toy_model();
        let reader = DocumentReader::attach(LongTextStrategy::HierAttn, LayerSelection::top(), &mut m, &mut Rng::new(4)).unwrap();
        let doc: Vec<u32> = (0..23).map(|i| 5 + (i * 7 % 30)).collect();
        let build = |t: &mut Tape<f64>, p: &crate::numeric::ParamStore<f64>| {
            let mm = m.with_params(p.clone());
            let f = reader.features(t, &mm, &[&doc], Mode::Eval, &mut Rng::new(0))?;
            let sq = t.mul(f, f)?;
            Ok(t.sum(sq))
        };
        let cfg = GradCheckConfig {
            step: 1e-5,
            samples_per_tensor: 20,
            abs_floor: 1e-4,
            ..Default::default()
        };
        let r = grad_check(build, &m.params, &cfg).unwrap();
        assert!(r.max_rel_error < 1e-5, "{r:?}");
    }
}
