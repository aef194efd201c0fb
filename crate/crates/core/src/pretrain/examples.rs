use serde::{Deserialize, Serialize};

use super::corpus::TokenizedCorpus;
use crate::error::{Error, Result};
use crate::numeric::Rng;
use crate::tokenizer::{encode, TokenizedSequence, CLS_ID, MASK_ID, RESERVED, SEP_ID};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskingPolicy {
    pub mask_prob: f64,
    /// Of the corrupted positions: share replaced by [MASK] ...
    pub to_mask: f64,
    /// ... by a random non-special token ...
    pub to_random: f64,
    /// ... and left unchanged (still predicted).
    pub to_keep: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            to_mask: 0.8,
            to_random: 0.1,
            to_keep: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn with_prob(mask_prob: f64) -> Self {
        Self {
            mask_prob,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.mask_prob, self.to_mask, self.to_random, self.to_keep];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidConfig(format!("masking probabilities out of range: {self:?}")));
        }
        if (self.to_mask + self.to_random + self.to_keep - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("mask/random/keep shares must sum to 1".into()));
        }
        Ok(())
    }
}

/// A corrupted sentence pair with MLM targets at the corrupted positions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainExample {
    pub seq: TokenizedSequence,
    /// `(position, original id)`, ascending by position.
    pub labels: Vec<(usize, u32)>,
    pub is_next: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NspPair {
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub is_next: bool,
}

/// Trims the longer segment from its end until both fit in `budget` tokens.
pub fn trim_pair(a: &mut Vec<u32>, b: &mut Vec<u32>, budget: usize) {
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
}

/// Segment A is a random sentence of `doc`; segment B is its successor with
/// probability 0.5 (or when `force_next` says so), otherwise a random sentence
/// from another document. Single-sentence documents always get a random B.
pub fn build_nsp_pair(
    corpus: &TokenizedCorpus,
    doc: usize,
    max_len: usize,
    force_next: Option<bool>,
    rng: &mut Rng,
) -> Result<NspPair> {
    let sentences = corpus
        .documents
        .get(doc)
        .ok_or_else(|| Error::Dataset(format!("document {doc} out of range")))?;
    if sentences.is_empty() {
        return Err(Error::Empty(format!("document {doc}")));
    }
    if max_len < 5 {
        return Err(Error::InvalidConfig("max_len too small for a sentence pair".into()));
    }
    let n = sentences.len();
    let want_next = force_next.unwrap_or_else(|| rng.bernoulli(0.5));
    let (a, b, is_next) = if n >= 2 && want_next {
        let i = rng.below(n - 1);
        (sentences[i].clone(), sentences[i + 1].clone(), true)
    } else {
        let i = if n >= 2 { rng.below(n - 1) } else { 0 };
        (sentences[i].clone(), random_sentence(corpus, doc, rng), false)
    };
    let (mut a, mut b) = (a, b);
    trim_pair(&mut a, &mut b, max_len - 3);
    Ok(NspPair { a, b, is_next })
}

fn random_sentence(corpus: &TokenizedCorpus, exclude: usize, rng: &mut Rng) -> Vec<u32> {
    let docs = corpus.documents.len();
    let d = if docs > 1 {
        let k = rng.below(docs - 1);
        if k >= exclude {
            k + 1
        } else {
            k
        }
    } else {
        exclude
    };
    let s = &corpus.documents[d];
    s[rng.below(s.len())].clone()
}

/// Corrupts each real, non-[CLS]/[SEP] position independently with
/// `mask_prob`, splitting corruptions between [MASK], a random token, and no change.
pub fn apply_masking(
    seq: &TokenizedSequence,
    policy: &MaskingPolicy,
    vocab_size: usize,
    rng: &mut Rng,
) -> PretrainExample {
    let mut out = seq.clone();
    let mut labels = Vec::new();
    let first_regular = RESERVED.len();
    for i in 0..seq.len() {
        let id = seq.input_ids[i];
        if seq.attention_mask[i] == 0 || id == CLS_ID || id == SEP_ID {
            continue;
        }
        if !rng.bernoulli(policy.mask_prob) {
            continue;
        }
        labels.push((i, id));
        let u = rng.uniform();
        out.input_ids[i] = if u < policy.to_mask {
            MASK_ID
        } else if u < policy.to_mask + policy.to_random && vocab_size > first_regular {
            (first_regular + rng.below(vocab_size - first_regular)) as u32
        } else {
            id
        };
    }
    PretrainExample {
        seq: out,
        labels,
        is_next: false,
    }
}

/// Example number `index` of a stream: document `index mod D`, its own RNG
/// derived from `seed` and `index`.
pub fn make_example(
    corpus: &TokenizedCorpus,
    index: u64,
    seed: u64,
    max_len: usize,
    policy: &MaskingPolicy,
    vocab_size: usize,
) -> Result<PretrainExample> {
    if corpus.is_empty() {
        return Err(Error::Empty("pre-training corpus".into()));
    }
    let mut rng = Rng::new(seed).derive(index);
    let doc = (index % corpus.len() as u64) as usize;
    let pair = build_nsp_pair(corpus, doc, max_len, None, &mut rng)?;
    let seq = encode(&pair.a, Some(&pair.b), max_len)?;
    let mut ex = apply_masking(&seq, policy, vocab_size, &mut rng);
    ex.is_next = pair.is_next;
    Ok(ex)
}

/// Examples `start .. start + count`, built in parallel; the result does not
/// depend on thread scheduling.
pub fn make_examples(
    corpus: &TokenizedCorpus,
    start: u64,
    count: usize,
    seed: u64,
    max_len: usize,
    policy: &MaskingPolicy,
    vocab_size: usize,
) -> Result<Vec<PretrainExample>> {
    use rayon::prelude::*;
    (0..count as u64)
        .into_par_iter()
        .map(|i| make_example(corpus, start + i, seed, max_len, policy, vocab_size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{MASK_ID, PAD_ID};

    fn corpus() -> TokenizedCorpus {
        TokenizedCorpus {
            documents: (0..20u32)
                .map(|d| (0..4u32).map(|s| vec![10 + d, 40 + s, 50 + s, 60 + d * 3 % 7]).collect())
                .collect(),
        }
    }

    #[test]
    fn policy_validation() {
        assert!(MaskingPolicy::default().validate().is_ok());
        let bad = MaskingPolicy {
            to_keep: 0.2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(MaskingPolicy::with_prob(1.5).validate().is_err());
    }

    #[test]
    fn trimming_longer_first() {
        let mut a = vec![7; 100];
        let mut b = vec![8; 60];
        trim_pair(&mut a, &mut b, 125);
        assert_eq!((a.len(), b.len()), (65, 60));
        let mut a = vec![7; 10];
        let mut b = vec![8; 200];
        trim_pair(&mut a, &mut b, 125);
        assert_eq!((a.len(), b.len()), (10, 115));
    }

    #[test]
    fn forced_next_on_two_sentence_doc() {
        let c = TokenizedCorpus {
            documents: vec![vec![vec![5, 6], vec![7, 8, 9]], vec![vec![20]]],
        };
        let p = build_nsp_pair(&c, 0, 128, Some(true), &mut Rng::new(1)).unwrap();
        assert_eq!((p.a, p.b, p.is_next), (vec![5, 6], vec![7, 8, 9], true));
        let p = build_nsp_pair(&c, 0, 128, Some(false), &mut Rng::new(1)).unwrap();
        assert_eq!(p.b, vec![20]);
        assert!(!p.is_next);
    }

    #[test]
    fn single_sentence_doc_falls_back_to_random() {
        let c = TokenizedCorpus {
            documents: vec![vec![vec![5, 6]], vec![vec![7], vec![8]]],
        };
        for s in 0..20 {
            let p = build_nsp_pair(&c, 0, 64, None, &mut Rng::new(s)).unwrap();
            assert!(!p.is_next);
            assert!(p.b == vec![7] || p.b == vec![8]);
        }
    }

    #[test]
    fn zero_probability_changes_nothing() {
        let seq = encode(&[10, 11, 12], Some(&[13]), 10).unwrap();
        let ex = apply_masking(&seq, &MaskingPolicy::with_prob(0.0), 100, &mut Rng::new(0));
        assert!(ex.labels.is_empty());
        assert_eq!(ex.seq, seq);
    }

    #[test]
    fn specials_and_padding_never_touched() {
        let seq = encode(&[10, 11, 12], Some(&[13, 14]), 12).unwrap();
        let mut r = Rng::new(4);
        for _ in 0..500 {
            let ex = apply_masking(&seq, &MaskingPolicy::with_prob(1.0), 100, &mut r);
            for (i, (&a, &b)) in seq.input_ids.iter().zip(&ex.seq.input_ids).enumerate() {
                if [CLS_ID, SEP_ID, PAD_ID].contains(&a) {
                    assert_eq!(a, b, "position {i}");
                }
            }
            assert_eq!(ex.labels.len(), 5);
            assert!(ex.labels.iter().all(|&(p, id)| seq.input_ids[p] == id));
        }
    }

    #[test]
    fn masking_is_reproducible() {
        let c = corpus();
        let p = MaskingPolicy::default();
        let a = make_examples(&c, 0, 50, 9, 32, &p, 100).unwrap();
        let b = make_examples(&c, 0, 50, 9, 32, &p, 100).unwrap();
        assert_eq!(a, b);
        let single: Vec<_> = (0..50).map(|i| make_example(&c, i, 9, 32, &p, 100).unwrap()).collect();
        assert_eq!(a, single);
    }

    #[test]
    fn masking_rates() {
        let seq = encode(&(10..100).collect::<Vec<_>>(), None, 92).unwrap();
        let mut r = Rng::new(11);
        let (mut total, mut hit, mut mask, mut rand, mut keep) = (0usize, 0usize, 0usize, 0usize, 0usize);
        while total < 100_000 {
            let ex = apply_masking(&seq, &MaskingPolicy::default(), 1000, &mut r);
            total += 90;
            hit += ex.labels.len();
            for &(p, id) in &ex.labels {
                let now = ex.seq.input_ids[p];
                if now == MASK_ID {
                    mask += 1;
                } else if now == id {
                    keep += 1;
                } else {
                    rand += 1;
                }
            }
        }
        let rate = hit as f64 / total as f64;
        assert!((rate - 0.15).abs() < 0.005, "{rate}");
        let f = |n: usize| n as f64 / hit as f64;
        // Random replacements can coincide with the original id (1 in 995).
        assert!((f(mask) - 0.8).abs() < 0.02);
        assert!((f(rand) - 0.1).abs() < 0.02);
        assert!((f(keep) - 0.1).abs() < 0.02);
    }

    #[test]
    fn nsp_balance() {
        let c = corpus();
        let ex = make_examples(&c, 0, 10_000, 3, 16, &MaskingPolicy::with_prob(0.0), 100).unwrap();
        let share = ex.iter().filter(|e| e.is_next).count() as f64 / ex.len() as f64;
        assert!((share - 0.5).abs() < 0.02, "{share}");
    }
}
