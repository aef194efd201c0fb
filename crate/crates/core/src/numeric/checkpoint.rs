//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "TBCKPT01"
//! header_len u64
//! header     header_len bytes of UTF-8 JSON (CheckpointHeader)
//! payload    for each entry of header.tensors, in order:
//!            product(shape) × f32 LE
//! ```
//!
//! The header carries the model config, the vocabulary hash, the step count,
//! free-form metadata, and the name and shape of every tensor. Serializing a
//! decoded checkpoint reproduces the original bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Element, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TBCKPT01";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: serde_json::Value,
    pub vocab_hash: Option<String>,
    pub step: u64,
    #[serde(default)]
    pub extra: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub vocab_hash: Option<String>,
    pub step: u64,
    pub extra: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn from_params<T: Element>(
        config: serde_json::Value,
        vocab_hash: Option<String>,
        step: u64,
        params: &ParamStore<T>,
    ) -> Self {
        Self {
            config,
            vocab_hash,
            step,
            extra: serde_json::Value::Null,
            tensors: params
                .iter()
                .map(|(_, p)| (p.name.clone(), p.value.cast()))
                .collect(),
        }
    }

    /// Overwrites every parameter in `params` with the same-named tensor.
    pub fn load_into<T: Element>(&self, params: &mut ParamStore<T>) -> Result<()> {
        for (name, t) in &self.tensors {
            let id = params.expect_id(name)?;
            let p = params.get_mut(id);
            if p.value.shape() != t.shape() {
                return Err(Error::ShapeMismatch {
                    op: "checkpoint",
                    lhs: p.value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            p.value = t.cast();
        }
        if self.tensors.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                self.tensors.len(),
                params.len()
            )));
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            step: self.step,
            extra: self.extra.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| TensorEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let hend = 16usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..hend])?;
        let mut off = hend;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let end = off + n * 4;
            if end > bytes.len() {
                return Err(bad(&format!("truncated payload for `{}`", e.name)));
            }
            let data = bytes[off..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
            off = end;
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            config: header.config,
            vocab_hash: header.vocab_hash,
            step: header.step,
            extra: header.extra,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
