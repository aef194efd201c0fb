use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::CsvFormat;
use super::finetune::TrainingRecipe;
use crate::error::{Error, Result};
use crate::model::EncoderConfig;
use crate::multitask::MixingKind;
use crate::pretrain::{MaskingPolicy, PretrainConfig, ScopeKind};
use crate::tokenizer::Language;

fn default_name() -> String {
    "run".into()
}
fn default_vocab_size() -> usize {
    8000
}
fn default_validation() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}

/// Encoder dimensions; the vocabulary size comes from the vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_positions: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = EncoderConfig::desk(0);
        Self {
            layers: d.layers,
            hidden: d.hidden,
            heads: d.heads,
            ffn: d.ffn,
            max_positions: d.max_positions,
        }
    }
}

impl ModelSection {
    pub fn encoder_config(&self, vocab_size: usize, dropout: f64) -> EncoderConfig {
        EncoderConfig {
            layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn: self.ffn,
            max_positions: self.max_positions,
            dropout,
            ..EncoderConfig::desk(vocab_size)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSection {
    /// Existing vocabulary file; when absent one is built from the training texts.
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default = "default_vocab_size")]
    pub size: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self {
            path: None,
            size: default_vocab_size(),
        }
    }
}

/// One labeled CSV dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(default)]
    pub name: Option<String>,
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub format: CsvFormat,
    #[serde(default)]
    pub num_classes: Option<usize>,
}

impl DataSection {
    pub fn task_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.train
                .file_stem()
                .map_or_else(|| "task".into(), |s| s.to_string_lossy().into_owned())
        })
    }
}

/// Documents for the pre-training corpus, by dataset name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub name: String,
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub format: CsvFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainSection {
    #[serde(default = "default_scope")]
    pub scope: ScopeKind,
    /// Dataset names in the scope; empty means the fine-tuning dataset alone.
    #[serde(default)]
    pub datasets: Vec<String>,
    #[serde(default)]
    pub dedup_pairs: Vec<(String, String)>,
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f64,
    pub steps: usize,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default = "default_pt_batch")]
    pub batch_size: usize,
    #[serde(default = "default_pt_len")]
    pub max_len: usize,
    #[serde(default = "default_pt_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_pt_warmup")]
    pub warmup_proportion: f64,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_language")]
    pub language: Language,
    #[serde(default)]
    pub sources: Vec<SourceSection>,
}

fn default_scope() -> ScopeKind {
    ScopeKind::WithinTask
}
fn default_mask_prob() -> f64 {
    0.15
}
fn default_pt_batch() -> usize {
    32
}
fn default_pt_len() -> usize {
    128
}
fn default_pt_lr() -> f64 {
    5e-5
}
fn default_pt_warmup() -> f64 {
    0.1
}
fn default_language() -> Language {
    Language::English
}

impl PretrainSection {
    pub fn pretrain_config(&self, seed: u64) -> PretrainConfig {
        PretrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            max_len: self.max_len,
            learning_rate: self.learning_rate,
            warmup_proportion: self.warmup_proportion,
            decay_factor: 1.0,
            mask: MaskingPolicy::with_prob(self.mask_prob),
            checkpoint_every: self.checkpoint_every,
            clip_norm: self.clip_norm,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitaskSection {
    #[serde(default)]
    pub mixing: MixingKind,
    pub tasks: Vec<DataSection>,
    /// Follow the joint phase with per-task refinement.
    #[serde(default = "default_true")]
    pub refine: bool,
    /// Defaults to half of `recipe.base_lr`.
    #[serde(default)]
    pub refine_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_grid_lrs")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_grid_decays")]
    pub decay_factors: Vec<f64>,
    #[serde(default = "default_sweep")]
    pub sweep: Vec<f64>,
}

fn default_grid_lrs() -> Vec<f64> {
    vec![2.5e-5, 2e-5]
}
fn default_grid_decays() -> Vec<f64> {
    vec![1.0, 0.95, 0.9, 0.85]
}
fn default_sweep() -> Vec<f64> {
    vec![2e-5, 5e-5, 1e-4, 4e-4]
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            learning_rates: default_grid_lrs(),
            decay_factors: default_grid_decays(),
            sweep: default_sweep(),
        }
    }
}

/// A complete experiment, read from TOML. Relative paths are resolved
/// against the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub vocab: VocabSection,
    /// Start from this checkpoint instead of a random initialization.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub data: Option<DataSection>,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    /// Stratified share of the training split to keep.
    #[serde(default)]
    pub few_shot: Option<f64>,
    #[serde(default)]
    pub recipe: TrainingRecipe,
    #[serde(default)]
    pub pretrain: Option<PretrainSection>,
    #[serde(default)]
    pub multitask: Option<MultitaskSection>,
    #[serde(default)]
    pub grid: Option<GridSection>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads, resolves paths and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_data = |d: &mut DataSection| {
            fix(&mut d.train);
            if let Some(t) = d.test.as_mut() {
                fix(t);
            }
        };
        if let Some(p) = self.vocab.path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.init_checkpoint.as_mut() {
            fix(p);
        }
        if let Some(d) = self.data.as_mut() {
            fix_data(d);
        }
        if let Some(pt) = self.pretrain.as_mut() {
            for s in &mut pt.sources {
                fix(&mut s.train);
                if let Some(t) = s.test.as_mut() {
                    fix(t);
                }
            }
        }
        if let Some(mt) = self.multitask.as_mut() {
            mt.tasks.iter_mut().for_each(fix_data);
        }
    }

    /// Every referenced file must exist; numeric fields must be in range.
    pub fn validate(&self) -> Result<()> {
        let data_files = |d: &DataSection| {
            let mut v = vec![d.train.clone()];
            v.extend(d.test.clone());
            v
        };
        let mut owned: Vec<PathBuf> = Vec::new();
        owned.extend(self.vocab.path.clone());
        owned.extend(self.init_checkpoint.clone());
        if let Some(d) = &self.data {
            owned.extend(data_files(d));
        }
        if let Some(pt) = &self.pretrain {
            for s in &pt.sources {
                owned.push(s.train.clone());
                owned.extend(s.test.clone());
            }
        }
        if let Some(mt) = &self.multitask {
            for t in &mt.tasks {
                owned.extend(data_files(t));
            }
        }
        if let Some(missing) = owned.iter().find(|p| !p.exists()) {
            return Err(Error::InvalidConfig(format!("file not found: {}", missing.display())));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if let Some(p) = self.few_shot {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidConfig(format!("few_shot {p} outside (0, 1]")));
            }
        }
        if self.recipe.batch_size == 0 {
            return Err(Error::InvalidConfig("recipe.batch_size must be positive".into()));
        }
        if !(self.recipe.decay_factor > 0.0 && self.recipe.decay_factor <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "recipe.decay_factor {} outside (0, 1]",
                self.recipe.decay_factor
            )));
        }
        if let Some(pt) = &self.pretrain {
            MaskingPolicy::with_prob(pt.mask_prob).validate()?;
        }
        if let Some(mt) = &self.multitask {
            if mt.tasks.len() < 2 {
                return Err(Error::InvalidConfig("multitask needs at least 2 tasks".into()));
            }
        }
        if let Some(g) = &self.grid {
            if g.learning_rates.is_empty() || g.decay_factors.is_empty() {
                return Err(Error::InvalidConfig("grid lists must be non-empty".into()));
            }
        }
        Ok(())
    }
}
