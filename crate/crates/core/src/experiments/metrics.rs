use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dataset::Split;
use crate::error::Result;
use crate::numeric::strict_deterministic;

/// One line of a metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run: String,
    pub step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<usize>,
    pub split: Split,
    /// Mean cross-entropy; `None` when the run diverged.
    pub loss: Option<f64>,
    /// `100 · (1 − accuracy)`.
    pub error_rate: Option<f64>,
    pub learning_rate: f64,
    /// Seconds since the log was opened; 0 in strict-deterministic mode.
    pub wall_clock: f64,
}

/// Accumulates records and serializes them as JSON lines.
#[derive(Debug)]
pub struct MetricsLog {
    pub records: Vec<MetricsRecord>,
    start: Instant,
}

impl Default for MetricsLog {
    fn default() -> Self {
        Self::new()
    }
}

impl MetricsLog {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            start: Instant::now(),
        }
    }

    pub fn elapsed(&self) -> f64 {
        if strict_deterministic() {
            0.0
        } else {
            self.start.elapsed().as_secs_f64()
        }
    }

    pub fn push(&mut self, mut record: MetricsRecord) {
        record.wall_clock = self.elapsed();
        if let Some(l) = record.loss {
            if !l.is_finite() {
                record.loss = None;
            }
        }
        self.records.push(record);
    }

    pub fn extend(&mut self, other: MetricsLog) {
        self.records.extend(other.records);
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Vec<MetricsRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }
}

/// Percentage of mismatches.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    100.0 * wrong as f64 / labels.len() as f64
}
