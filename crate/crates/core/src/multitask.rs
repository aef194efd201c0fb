//! Multi-task fine-tuning: one shared encoder, a private classifier head per
//! task, and optional per-task refinement afterwards.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{
    fine_tune, optimizer_for, task_params, Classifier, EncodedExample, Evaluation, FinetuneOutcome, MetricsLog,
    MetricsRecord, Split, TrainingRecipe,
};
use crate::longtext::{DocumentReader, LongTextStrategy};
use crate::model::{ClassifierHead, EncoderModel, LayerSelection};
use crate::numeric::{Checkpoint, ParamId, Rng};
use crate::optim::LayerwiseOptimizer;

/// Shared encoder plus one head per task, all in the same parameter store.
#[derive(Clone, Debug)]
pub struct MultiTaskModel {
    pub model: EncoderModel<f32>,
    pub reader: DocumentReader,
    pub heads: BTreeMap<String, ClassifierHead>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TaskMeta {
    name: String,
    classes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MultiTaskMeta {
    strategy: LongTextStrategy,
    layers: LayerSelection,
    tasks: Vec<TaskMeta>,
}

impl MultiTaskModel {
    /// Attaches one fresh head per `(name, classes)` pair.
    pub fn attach(
        mut model: EncoderModel<f32>,
        tasks: &[(&str, usize)],
        strategy: LongTextStrategy,
        layers: LayerSelection,
        rng: &mut Rng,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::InvalidConfig("multi-task model needs at least one task".into()));
        }
        let reader = DocumentReader::attach(strategy, layers, &mut model, rng)?;
        let width = layers.width(model.config.layers, model.config.hidden)?;
        let mut heads = BTreeMap::new();
        for &(name, classes) in tasks {
            if heads.contains_key(name) {
                return Err(Error::InvalidConfig(format!("duplicate task `{name}`")));
            }
            let head = ClassifierHead::attach(&mut model, name, width, classes, rng)?;
            heads.insert(name.to_string(), head);
        }
        Ok(Self { model, reader, heads })
    }

    pub fn head(&self, task: &str) -> Result<&ClassifierHead> {
        self.heads
            .get(task)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task `{task}`")))
    }

    /// Shared parameters plus the head of `task`.
    pub fn trainable(&self, task: &str) -> Result<HashSet<ParamId>> {
        Ok(task_params(&self.model, self.head(task)?))
    }

    /// Every parameter that is not a task head.
    pub fn shared(&self) -> HashSet<ParamId> {
        self.model
            .params
            .iter()
            .filter(|(_, p)| !p.name.starts_with("head."))
            .map(|(id, _)| id)
            .collect()
    }

    /// Single-task view sharing nothing with `self` (the model is cloned).
    pub fn classifier(&self, task: &str) -> Result<Classifier> {
        Ok(Classifier {
            model: self.model.clone(),
            head: self.head(task)?.clone(),
            reader: self.reader.clone(),
        })
    }

    pub fn evaluate(&self, task: &str, data: &[EncodedExample], batch: usize) -> Result<Evaluation> {
        crate::experiments::evaluate(&self.model, self.head(task)?, &self.reader, data, batch)
    }

    pub fn to_checkpoint(&self, vocab_hash: Option<String>, step: u64) -> Result<Checkpoint> {
        let meta = MultiTaskMeta {
            strategy: self.reader.strategy,
            layers: self.reader.selection,
            tasks: self
                .heads
                .values()
                .map(|h| TaskMeta {
                    name: h.name.clone(),
                    classes: h.classes,
                })
                .collect(),
        };
        self.model.to_checkpoint(vocab_hash, step, serde_json::to_value(meta)?)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta: MultiTaskMeta = serde_json::from_value(ckpt.extra.clone())
            .map_err(|e| Error::Checkpoint(format!("multi-task metadata: {e}")))?;
        let model = EncoderModel::from_checkpoint(ckpt)?;
        let reader = DocumentReader::find(meta.strategy, meta.layers, &model)?;
        let mut heads = BTreeMap::new();
        for t in meta.tasks {
            let head = ClassifierHead::find(&model, &t.name)?;
            if head.classes != t.classes {
                return Err(Error::Checkpoint(format!(
                    "task `{}` has {} classes in metadata but {} in tensors",
                    t.name, t.classes, head.classes
                )));
            }
            heads.insert(t.name, head);
        }
        Ok(Self { model, reader, heads })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum MixingKind {
    #[default]
    Proportional,
    RoundRobin,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingStrategy {
    #[serde(default)]
    pub kind: MixingKind,
    #[serde(default)]
    pub seed: u64,
}

/// Draws the task for each batch.
#[derive(Clone, Debug)]
pub struct TaskSampler {
    kind: MixingKind,
    sizes: Vec<usize>,
    total: usize,
    rng: Rng,
    next: usize,
}

impl TaskSampler {
    pub fn new(mixing: MixingStrategy, sizes: &[usize]) -> Result<Self> {
        if let Some(i) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::Empty(format!("dataset of task {i}")));
        }
        if sizes.is_empty() {
            return Err(Error::Empty("task list".into()));
        }
        Ok(Self {
            kind: mixing.kind,
            sizes: sizes.to_vec(),
            total: sizes.iter().sum(),
            rng: Rng::new(mixing.seed),
            next: 0,
        })
    }

    pub fn sample(&mut self) -> usize {
        match self.kind {
            MixingKind::RoundRobin => {
                let t = self.next;
                self.next = (self.next + 1) % self.sizes.len();
                t
            }
            MixingKind::Proportional => {
                let mut r = self.rng.below(self.total);
                for (i, &n) in self.sizes.iter().enumerate() {
                    if r < n {
                        return i;
                    }
                    r -= n;
                }
                unreachable!("draw below total")
            }
        }
    }
}

/// Training data for one task.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub name: String,
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
}

/// Result of one multi-task step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskStep {
    pub task: usize,
    /// `None` when the step produced a non-finite loss or gradient.
    pub loss: Option<f64>,
    pub learning_rate: f64,
}

/// Stateful driver: one sampled task and one batch per step.
pub struct MultiTaskTrainer<'a> {
    tasks: &'a [TaskData],
    active: Vec<HashSet<ParamId>>,
    sampler: TaskSampler,
    opt: LayerwiseOptimizer,
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    order_rng: Rng,
    dropout_rng: Rng,
    batch_size: usize,
    total: usize,
}

impl<'a> MultiTaskTrainer<'a> {
    pub fn new(
        mt: &mut MultiTaskModel,
        tasks: &'a [TaskData],
        recipe: &TrainingRecipe,
        mixing: MixingStrategy,
        seed: u64,
    ) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(Error::InvalidConfig("multi-task fine-tuning needs at least 2 tasks".into()));
        }
        if recipe.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        let sizes: Vec<usize> = tasks.iter().map(|t| t.train.len()).collect();
        if let Some(t) = tasks.iter().find(|t| t.train.is_empty()) {
            return Err(Error::Empty(format!("training set of task `{}`", t.name)));
        }
        let sampler = TaskSampler::new(mixing, &sizes)?;
        let active = tasks.iter().map(|t| mt.trainable(&t.name)).collect::<Result<Vec<_>>>()?;
        mt.model.config.dropout = recipe.dropout;
        mt.model.config.validate()?;
        let total = multitask_steps(recipe, &sizes);
        let opt = optimizer_for(&mt.model, recipe, recipe.base_lr, total)?;
        Ok(Self {
            tasks,
            active,
            sampler,
            opt,
            orders: vec![Vec::new(); tasks.len()],
            cursors: vec![0; tasks.len()],
            order_rng: Rng::new(seed).derive(1),
            dropout_rng: Rng::new(seed).derive(2),
            batch_size: recipe.batch_size,
            total,
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total
    }

    pub fn steps_taken(&self) -> usize {
        self.opt.steps_taken()
    }

    fn next_batch(&mut self, task: usize) -> Vec<usize> {
        let n = self.tasks[task].train.len();
        if self.cursors[task] >= self.orders[task].len() {
            let mut order: Vec<usize> = (0..n).collect();
            self.order_rng.shuffle(&mut order);
            self.orders[task] = order;
            self.cursors[task] = 0;
        }
        let start = self.cursors[task];
        let end = (start + self.batch_size).min(n);
        self.cursors[task] = end;
        self.orders[task][start..end].to_vec()
    }

    /// Samples a task and trains the encoder and that task's head on one batch.
    pub fn step(&mut self, mt: &mut MultiTaskModel) -> Result<TaskStep> {
        let task = self.sampler.sample();
        let idx = self.next_batch(task);
        let data = &self.tasks[task];
        let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &data.train[i]).collect();
        let head = mt.head(&data.name)?.clone();
        let learning_rate = self.opt.current_rate();
        let loss = crate::experiments::train_step(
            &mut mt.model,
            &head,
            &mt.reader,
            &mut self.opt,
            &self.active[task],
            &batch,
            &mut self.dropout_rng,
        )?;
        Ok(TaskStep {
            task,
            loss,
            learning_rate,
        })
    }
}

/// `epochs · Σ ceil(|D_i| / batch)`, capped by `train_steps`.
pub fn multitask_steps(recipe: &TrainingRecipe, sizes: &[usize]) -> usize {
    let per_epoch: usize = sizes.iter().map(|n| n.div_ceil(recipe.batch_size.max(1))).sum();
    let full = recipe.epochs * per_epoch;
    recipe.train_steps.map_or(full, |cap| cap.min(full))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskReport {
    pub steps: usize,
    /// Batches drawn per task, in task order.
    pub task_batches: Vec<usize>,
    /// Final validation error per task.
    pub validation_error: BTreeMap<String, f64>,
    pub diverged: bool,
}

/// Trains all tasks jointly. Validation error is logged per task every
/// `Σ ceil(|D_i| / batch)` steps and at the end; the final parameters are kept.
pub fn multitask_finetune(
    mt: &mut MultiTaskModel,
    tasks: &[TaskData],
    recipe: &TrainingRecipe,
    mixing: MixingStrategy,
    seed: u64,
    run: &str,
    log: &mut MetricsLog,
) -> Result<MultiTaskReport> {
    let mut trainer = MultiTaskTrainer::new(mt, tasks, recipe, mixing, seed)?;
    let sizes: Vec<usize> = tasks.iter().map(|t| t.train.len()).collect();
    let interval = multitask_steps(
        &TrainingRecipe {
            epochs: 1,
            train_steps: None,
            ..recipe.clone()
        },
        &sizes,
    )
    .max(1);
    let total = trainer.total_steps();
    let mut report = MultiTaskReport {
        task_batches: vec![0; tasks.len()],
        ..Default::default()
    };
    let mut lr = 0.0;
    let mut epoch = 0;
    let eval_all = |mt: &MultiTaskModel, log: &mut MetricsLog, step, epoch, lr, report: &mut MultiTaskReport| {
        for t in tasks {
            let ev = mt.evaluate(&t.name, &t.validation, recipe.eval_batch_size)?;
            log.push(MetricsRecord {
                run: format!("{run}/{}", t.name),
                step,
                epoch: Some(epoch),
                split: Split::Validation,
                loss: Some(ev.loss),
                error_rate: Some(ev.error_rate),
                learning_rate: lr,
                wall_clock: 0.0,
            });
            report.validation_error.insert(t.name.clone(), ev.error_rate);
        }
        Ok::<_, Error>(())
    };
    while trainer.steps_taken() < total {
        let s = trainer.step(mt)?;
        lr = s.learning_rate;
        report.task_batches[s.task] += 1;
        if s.loss.is_none() {
            report.diverged = true;
            log.push(MetricsRecord {
                run: format!("{run}/{}", tasks[s.task].name),
                step: trainer.steps_taken(),
                epoch: None,
                split: Split::Train,
                loss: None,
                error_rate: None,
                learning_rate: lr,
                wall_clock: 0.0,
            });
            break;
        }
        let done = trainer.steps_taken();
        if done % interval == 0 && done < total {
            epoch += 1;
            eval_all(mt, log, done, epoch, lr, &mut report)?;
        }
    }
    report.steps = trainer.steps_taken();
    let has_valid = tasks.iter().all(|t| !t.validation.is_empty());
    if has_valid && !report.diverged {
        eval_all(mt, log, report.steps, epoch + 1, lr, &mut report)?;
    }
    Ok(report)
}

/// Rate used for refinement when none is given: half the multi-task rate.
pub fn default_refine_rate(recipe: &TrainingRecipe) -> f64 {
    recipe.base_lr / 2.0
}

/// Continues single-task fine-tuning of `task` from the multi-task weights at
/// `lower_rate`. Other heads are carried along unchanged.
pub fn per_task_refine(
    mt: &MultiTaskModel,
    task: &TaskData,
    test: Option<&[EncodedExample]>,
    recipe: &TrainingRecipe,
    lower_rate: f64,
    seed: u64,
    log: &mut MetricsLog,
) -> Result<(MultiTaskModel, FinetuneOutcome)> {
    if !(lower_rate > 0.0 && lower_rate < recipe.base_lr) {
        return Err(Error::InvalidConfig(format!(
            "refinement rate {lower_rate} must be positive and below the multi-task rate {}",
            recipe.base_lr
        )));
    }
    let mut clf = mt.classifier(&task.name)?;
    let dropout = clf.model.config.dropout;
    let refine = TrainingRecipe {
        base_lr: lower_rate,
        ..recipe.clone()
    };
    let outcome = if refine.total_steps(task.train.len()) == 0 {
        FinetuneOutcome::default()
    } else {
        fine_tune(
            &mut clf,
            &task.train,
            &task.validation,
            test,
            &refine,
            seed,
            &format!("refine/{}", task.name),
            log,
        )?
    };
    clf.model.config.dropout = dropout;
    Ok((
        MultiTaskModel {
            model: clf.model,
            reader: mt.reader.clone(),
            heads: mt.heads.clone(),
        },
        outcome,
    ))
}
