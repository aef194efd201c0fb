use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_eps() -> f64 {
    1e-5
}

fn default_segments() -> usize {
    2
}

/// Encoder dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Number of transformer blocks.
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    /// Feed-forward inner width, conventionally `4 * hidden`.
    pub ffn: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    #[serde(default = "default_segments")]
    pub segment_types: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Desk-scale model: 2 blocks, hidden 64, 2 heads, max length 128.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            layers: 2,
            hidden: 64,
            heads: 2,
            ffn: 256,
            vocab_size,
            max_positions: 128,
            dropout: 0.1,
            segment_types: 2,
            layer_norm_eps: default_eps(),
        }
    }

    /// BERT-base dimensions.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            layers: 12,
            hidden: 768,
            heads: 12,
            ffn: 3072,
            vocab_size,
            max_positions: 512,
            dropout: 0.1,
            segment_types: 2,
            layer_norm_eps: default_eps(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers < 1 {
            return bad("at least one block required".into());
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return bad(format!("hidden {} not divisible by heads {}", self.hidden, self.heads));
        }
        if self.hidden < 2 {
            return bad("hidden size must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size < crate::tokenizer::RESERVED.len() {
            return bad("vocabulary smaller than the reserved tokens".into());
        }
        if self.max_positions < 2 || self.ffn == 0 || self.segment_types == 0 {
            return bad("max_positions, ffn and segment_types must be positive".into());
        }
        Ok(())
    }

    /// Closed-form number of encoder weights (embeddings and blocks).
    pub fn encoder_param_count(&self) -> usize {
        let h = self.hidden;
        let f = self.ffn;
        let embeddings = (self.vocab_size + self.max_positions + self.segment_types) * h + 2 * h;
        let attention = 4 * (h * h + h) + 2 * h;
        let feed_forward = h * f + f + f * h + h + 2 * h;
        embeddings + self.layers * (attention + feed_forward)
    }
}
