use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::dataset::{EncodedExample, Split};
use super::metrics::{error_rate, MetricsLog, MetricsRecord};
use crate::error::{Error, Result};
use crate::longtext::{DocumentReader, LongTextStrategy};
use crate::model::{ClassifierHead, EncoderModel, LayerSelection, Mode};
use crate::numeric::{Checkpoint, Element, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::optim::{AdamConfig, LayerwiseLrSchedule, LayerwiseOptimizer, StlrSchedule};

fn default_lr() -> f64 {
    2e-5
}
fn default_decay() -> f64 {
    1.0
}
fn default_warmup() -> f64 {
    0.1
}
fn default_epochs() -> usize {
    4
}
fn default_batch() -> usize {
    24
}
fn default_dropout() -> f64 {
    0.1
}
fn default_eval_batch() -> usize {
    64
}
fn default_true() -> bool {
    true
}

/// How one fine-tuning run trains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecipe {
    #[serde(default)]
    pub strategy: LongTextStrategy,
    #[serde(default)]
    pub layers: LayerSelection,
    #[serde(default = "default_lr")]
    pub base_lr: f64,
    #[serde(default = "default_decay")]
    pub decay_factor: f64,
    #[serde(default = "default_warmup")]
    pub warmup_proportion: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Cap on optimizer steps; by default `epochs · ceil(N / batch_size)`.
    #[serde(default)]
    pub train_steps: Option<usize>,
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Also measure error on the full training set after each epoch.
    #[serde(default = "default_true")]
    pub eval_train: bool,
}

impl Default for TrainingRecipe {
    fn default() -> Self {
        Self {
            strategy: LongTextStrategy::default(),
            layers: LayerSelection::default(),
            base_lr: default_lr(),
            decay_factor: default_decay(),
            warmup_proportion: default_warmup(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            dropout: default_dropout(),
            train_steps: None,
            clip_norm: None,
            eval_batch_size: default_eval_batch(),
            eval_train: true,
        }
    }
}

impl TrainingRecipe {
    pub fn total_steps(&self, train_len: usize) -> usize {
        let per_epoch = train_len.div_ceil(self.batch_size.max(1));
        let full = self.epochs * per_epoch;
        self.train_steps.map_or(full, |cap| cap.min(full))
    }
}

/// Encoder, one task head, and the document reader that feeds it.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub model: EncoderModel<f32>,
    pub head: ClassifierHead,
    pub reader: DocumentReader,
}

impl Classifier {
    /// Adds a fresh head (and combiner, for attention pooling) to `model`.
    pub fn attach(
        mut model: EncoderModel<f32>,
        task: &str,
        classes: usize,
        strategy: LongTextStrategy,
        layers: LayerSelection,
        rng: &mut Rng,
    ) -> Result<Self> {
        let reader = DocumentReader::attach(strategy, layers, &mut model, rng)?;
        let width = layers.width(model.config.layers, model.config.hidden)?;
        let head = ClassifierHead::attach(&mut model, task, width, classes, rng)?;
        Ok(Self { model, head, reader })
    }

    /// Restores a classifier saved with [`to_checkpoint`](Self::to_checkpoint).
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: ClassifierMeta = serde_json::from_value(ckpt.extra.clone())
            .map_err(|e| Error::Checkpoint(format!("classifier metadata: {e}")))?;
        let model = EncoderModel::from_checkpoint(ckpt)?;
        let reader = DocumentReader::find(meta.strategy, meta.layers, &model)?;
        let head = ClassifierHead::find(&model, &meta.task)?;
        Ok(Self { model, head, reader })
    }

    pub fn to_checkpoint(&self, vocab_hash: Option<String>, step: u64) -> Result<Checkpoint> {
        let meta = ClassifierMeta {
            task: self.head.name.clone(),
            strategy: self.reader.strategy,
            layers: self.reader.selection,
        };
        self.model.to_checkpoint(vocab_hash, step, serde_json::to_value(meta)?)
    }

    /// Encoder parameters plus this task's head and combiner.
    pub fn trainable(&self) -> HashSet<ParamId> {
        task_params(&self.model, &self.head)
    }

    pub fn evaluate(&self, data: &[EncodedExample], batch: usize) -> Result<Evaluation> {
        evaluate(&self.model, &self.head, &self.reader, data, batch)
    }

    /// Class probabilities for each document (word-piece ids, no specials).
    pub fn predict_proba(&self, docs: &[&[u32]]) -> Result<Vec<Vec<f32>>> {
        if docs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let features = self.reader.features(&mut tape, &self.model, docs, Mode::Eval, &mut Rng::new(0))?;
        let logits = self.head.logits(&mut tape, &self.model, features)?;
        let p = tape.softmax(logits)?;
        let v = tape.value(p);
        Ok((0..docs.len()).map(|r| v.row(r).to_vec()).collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ClassifierMeta {
    task: String,
    strategy: LongTextStrategy,
    layers: LayerSelection,
}

/// Encoder, combiner and `head` parameters; never the pre-training heads or other tasks' heads.
pub fn task_params<T: Element>(model: &EncoderModel<T>, head: &ClassifierHead) -> HashSet<ParamId> {
    model
        .params
        .iter()
        .filter(|(_, p)| ["embeddings.", "layer.", "combiner."].iter().any(|pre| p.name.starts_with(pre)))
        .map(|(id, _)| id)
        .chain([head.weight, head.bias])
        .collect()
}

/// Mean cross-entropy of the head over a batch of documents.
pub fn classification_loss<T: Element>(
    tape: &mut Tape<T>,
    model: &EncoderModel<T>,
    head: &ClassifierHead,
    reader: &DocumentReader,
    batch: &[&EncodedExample],
    mode: Mode,
    rng: &mut Rng,
) -> Result<Var> {
    let docs: Vec<&[u32]> = batch.iter().map(|e| e.ids.as_slice()).collect();
    let features = reader.features(tape, model, &docs, mode, rng)?;
    let logits = head.logits(tape, model, features)?;
    let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
    tape.cross_entropy(logits, &labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub error_rate: f64,
    pub predictions: Vec<usize>,
}

/// Dropout-free loss and error rate over `data`, in `batch`-sized chunks.
pub fn evaluate<T: Element>(
    model: &EncoderModel<T>,
    head: &ClassifierHead,
    reader: &DocumentReader,
    data: &[EncodedExample],
    batch: usize,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    let mut rng = Rng::new(0);
    for chunk in data.chunks(batch.max(1)) {
        let mut tape = Tape::new();
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let docs: Vec<&[u32]> = refs.iter().map(|e| e.ids.as_slice()).collect();
        let features = reader.features(&mut tape, model, &docs, Mode::Eval, &mut rng)?;
        let logits = head.logits(&mut tape, model, features)?;
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let loss = tape.cross_entropy(logits, &labels)?;
        loss_sum += tape.value(loss).data()[0].as_f64() * chunk.len() as f64;
        let lv = tape.value(logits);
        for r in 0..chunk.len() {
            predictions.push(argmax(lv.row(r)));
        }
    }
    let labels: Vec<usize> = data.iter().map(|e| e.label).collect();
    Ok(Evaluation {
        loss: loss_sum / data.len() as f64,
        error_rate: error_rate(&predictions, &labels),
        predictions,
    })
}

/// First index of the largest value.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneOutcome {
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub best_validation_error: Option<f64>,
    pub test_error: Option<f64>,
    pub diverged: bool,
    pub steps: usize,
    pub epochs_run: usize,
}

pub(crate) fn snapshot<T: Element>(params: &ParamStore<T>, ids: &HashSet<ParamId>) -> Vec<(ParamId, Tensor<T>)> {
    let mut v: Vec<_> = ids.iter().map(|&id| (id, params.value(id).clone())).collect();
    v.sort_by_key(|(id, _)| id.0);
    v
}

pub(crate) fn restore<T: Element>(params: &mut ParamStore<T>, snap: Vec<(ParamId, Tensor<T>)>) {
    for (id, t) in snap {
        params.get_mut(id).value = t;
    }
}

/// One training step on `batch`. Returns the loss, or `None` when the loss or a
/// gradient is not finite (parameters are then left untouched).
pub(crate) fn train_step(
    model: &mut EncoderModel<f32>,
    head: &ClassifierHead,
    reader: &DocumentReader,
    opt: &mut LayerwiseOptimizer,
    active: &HashSet<ParamId>,
    batch: &[&EncodedExample],
    rng: &mut Rng,
) -> Result<Option<f64>> {
    let mut tape = Tape::new();
    let loss = classification_loss(&mut tape, model, head, reader, batch, Mode::Train, rng);
    let loss = match loss {
        Ok(l) => l,
        Err(Error::NonFinite(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let value = tape.value(loss).data()[0] as f64;
    if !value.is_finite() {
        return Ok(None);
    }
    tape.backward(loss, &mut model.params)?;
    match opt.step(&mut model.params, Some(active)) {
        Ok(_) => Ok(Some(value)),
        Err(Error::NanGradient(name)) => {
            log::warn!("non-finite gradient in `{name}`; stopping run");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

pub(crate) fn optimizer_for(
    model: &EncoderModel<f32>,
    recipe: &TrainingRecipe,
    base_lr: f64,
    total: usize,
) -> Result<LayerwiseOptimizer> {
    let layerwise = LayerwiseLrSchedule::new(base_lr, recipe.decay_factor, model.config.layers)?;
    let schedule = StlrSchedule::new(total.max(1), recipe.warmup_proportion, base_lr)?;
    let adam = AdamConfig {
        clip_norm: recipe.clip_norm,
        ..AdamConfig::default()
    };
    Ok(LayerwiseOptimizer::new(&model.params, layerwise, schedule, adam))
}

/// Trains up to `recipe.epochs` epochs, evaluating after each, and keeps the
/// parameters of the epoch with the lowest validation error (earliest on ties).
/// A non-finite loss stops the run and marks it diverged.
#[allow(clippy::too_many_arguments)]
pub fn fine_tune(
    clf: &mut Classifier,
    train: &[EncodedExample],
    validation: &[EncodedExample],
    test: Option<&[EncodedExample]>,
    recipe: &TrainingRecipe,
    seed: u64,
    run: &str,
    log: &mut MetricsLog,
) -> Result<FinetuneOutcome> {
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if recipe.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    clf.model.config.dropout = recipe.dropout;
    clf.model.config.validate()?;
    let total = recipe.total_steps(train.len());
    let mut opt = optimizer_for(&clf.model, recipe, recipe.base_lr, total)?;
    let active = clf.trainable();
    let mut order_rng = Rng::new(seed).derive(1);
    let mut dropout_rng = Rng::new(seed).derive(2);
    let mut out = FinetuneOutcome::default();
    let mut best: Option<Vec<(ParamId, Tensor<f32>)>> = None;
    let record = |log: &mut MetricsLog, step, epoch, split, loss, err, lr| {
        log.push(MetricsRecord {
            run: run.to_string(),
            step,
            epoch: Some(epoch),
            split,
            loss,
            error_rate: err,
            learning_rate: lr,
            wall_clock: 0.0,
        });
    };

    'epochs: for epoch in 1..=recipe.epochs {
        if out.steps >= total {
            break;
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        order_rng.shuffle(&mut order);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut lr = 0.0;
        for idx in order.chunks(recipe.batch_size) {
            if out.steps >= total {
                break;
            }
            let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &train[i]).collect();
            lr = opt.current_rate();
            match train_step(&mut clf.model, &clf.head, &clf.reader, &mut opt, &active, &batch, &mut dropout_rng)? {
                Some(l) => {
                    loss_sum += l * batch.len() as f64;
                    seen += batch.len();
                    out.steps += 1;
                }
                None => {
                    out.diverged = true;
                    out.epochs_run = epoch;
                    record(log, out.steps, epoch, Split::Train, None, None, lr);
                    break 'epochs;
                }
            }
        }
        out.epochs_run = epoch;
        let train_loss = loss_sum / seen.max(1) as f64;
        let train_err = if recipe.eval_train {
            Some(clf.evaluate(train, recipe.eval_batch_size)?.error_rate)
        } else {
            None
        };
        record(log, out.steps, epoch, Split::Train, Some(train_loss), train_err, lr);
        let val = clf.evaluate(validation, recipe.eval_batch_size)?;
        record(log, out.steps, epoch, Split::Validation, Some(val.loss), Some(val.error_rate), lr);
        if let Some(t) = test {
            let te = clf.evaluate(t, recipe.eval_batch_size)?;
            record(log, out.steps, epoch, Split::Test, Some(te.loss), Some(te.error_rate), lr);
        }
        if out.best_validation_error.is_none_or(|b| val.error_rate < b) {
            out.best_validation_error = Some(val.error_rate);
            out.best_epoch = Some(epoch);
            best = Some(snapshot(&clf.model.params, &active));
        }
    }
    if let Some(snap) = best {
        restore(&mut clf.model.params, snap);
        if let Some(t) = test {
            out.test_error = Some(clf.evaluate(t, recipe.eval_batch_size)?.error_rate);
        }
    }
    Ok(out)
}
