use serde::{Deserialize, Serialize};

use super::vocab::{CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};

/// Model input for one example: `[CLS] a… [SEP] (b… [SEP])` padded to a fixed length.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSequence {
    pub input_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub position_ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub label: Option<usize>,
}

impl TokenizedSequence {
    /// Padded length.
    pub fn len(&self) -> usize {
        self.input_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_ids.is_empty()
    }

    /// Number of real (unpadded) positions.
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().filter(|&&m| m == 1).count()
    }

    /// Content ids between the specials, in order, with padding removed.
    pub fn content_ids(&self) -> Vec<u32> {
        self.input_ids
            .iter()
            .zip(&self.attention_mask)
            .filter(|&(&id, &m)| m == 1 && id != CLS_ID && id != SEP_ID)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }
}

/// Wraps one or two already-truncated segments with `[CLS]`/`[SEP]` and pads
/// to `max_len`. Overflow is an error; truncation is the caller's job.
pub fn encode(seg_a: &[u32], seg_b: Option<&[u32]>, max_len: usize) -> Result<TokenizedSequence> {
    let specials = if seg_b.is_some() { 3 } else { 2 };
    let real = seg_a.len() + seg_b.map_or(0, <[u32]>::len) + specials;
    if real > max_len {
        return Err(Error::SequenceTooLong { len: real, max: max_len });
    }
    let mut input_ids = Vec::with_capacity(max_len);
    let mut segment_ids = Vec::with_capacity(max_len);
    input_ids.push(CLS_ID);
    input_ids.extend_from_slice(seg_a);
    input_ids.push(SEP_ID);
    segment_ids.resize(input_ids.len(), 0);
    if let Some(b) = seg_b {
        input_ids.extend_from_slice(b);
        input_ids.push(SEP_ID);
        segment_ids.resize(input_ids.len(), 1);
    }
    let mut attention_mask = vec![1u8; input_ids.len()];
    input_ids.resize(max_len, PAD_ID);
    segment_ids.resize(max_len, 0);
    attention_mask.resize(max_len, 0);
    Ok(TokenizedSequence {
        input_ids,
        segment_ids,
        position_ids: (0..max_len as u32).collect(),
        attention_mask,
        label: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const X: u32 = 10;
    const Y: u32 = 11;

    #[test]
    fn single_segment_padded() {
        let s = encode(&[X, Y], None, 6).unwrap();
        assert_eq!(s.input_ids, vec![CLS_ID, X, Y, SEP_ID, PAD_ID, PAD_ID]);
        assert_eq!(s.attention_mask, vec![1, 1, 1, 1, 0, 0]);
        assert_eq!(s.segment_ids, vec![0; 6]);
        assert_eq!(s.position_ids, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn two_segments() {
        let s = encode(&[X], Some(&[Y]), 5).unwrap();
        assert_eq!(s.input_ids, vec![CLS_ID, X, SEP_ID, Y, SEP_ID]);
        assert_eq!(s.segment_ids, vec![0, 0, 0, 1, 1]);
    }

    #[test]
    fn capacity_510() {
        let a = vec![X; 509];
        let s = encode(&a, None, 512).unwrap();
        assert_eq!(s.real_len(), 511);
        assert!(encode(&vec![X; 510], None, 512).is_ok());
        assert!(matches!(
            encode(&vec![X; 511], None, 512),
            Err(Error::SequenceTooLong { len: 513, max: 512 })
        ));
    }

    proptest! {
        #[test]
        fn encode_invariants(a in 0usize..40, b in proptest::option::of(0usize..40), max_len in 2usize..90) {
            let seg_a = vec![X; a];
            let seg_b = b.map(|n| vec![Y; n]);
            match encode(&seg_a, seg_b.as_deref(), max_len) {
                Ok(s) => {
                    prop_assert!(s.len() <= max_len);
                    prop_assert_eq!(s.input_ids[0], CLS_ID);
                    let seps = s.input_ids.iter().filter(|&&t| t == SEP_ID).count();
                    let want_seps = if b.is_some() { 2 } else { 1 };
                    prop_assert_eq!(seps, want_seps);
                    // segment ids: 0s then 1s (padding resets to 0 only after the mask ends)
                    let real: Vec<u32> = s.segment_ids[..s.real_len()].to_vec();
                    prop_assert!(real.windows(2).all(|w| w[0] <= w[1]));
                    prop_assert_eq!(s.content_ids().len(), a + b.unwrap_or(0));
                }
                Err(_) => {
                    let specials = if b.is_some() { 3 } else { 2 };
                    prop_assert!(a + b.unwrap_or(0) + specials > max_len);
                }
            }
        }
    }
}
