use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DataSection, ExperimentConfig};
use super::dataset::{load_dataset, split_validation, subsample, EncodedExample, Split};
use super::finetune::{fine_tune, Classifier, FinetuneOutcome, TrainingRecipe};
use super::metrics::{MetricsLog, MetricsRecord};
use crate::error::{Error, Result};
use crate::longtext::DocumentReader;
use crate::model::{ClassifierHead, EncoderModel};
use crate::multitask::{
    default_refine_rate, multitask_finetune, per_task_refine, MixingStrategy, MultiTaskModel, MultiTaskReport,
    TaskData,
};
use crate::numeric::{strict_deterministic, Checkpoint, Rng};
use crate::pretrain::{
    assemble_corpus, further_pretrain, Corpus, PretrainReport, PretrainScope, SourceDocuments,
};
use crate::tokenizer::{build_vocab, Vocabulary};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const MODEL_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GRID_FILE: &str = "grid.tsv";
pub const CURVES_FILE: &str = "curves.jsonl";

/// Independent seed for one stage of a run.
pub fn stage_seed(seed: u64, stage: u64) -> u64 {
    Rng::new(seed).derive(stage).next_u64()
}

const SPLIT_STAGE: u64 = 1;
const FEW_SHOT_STAGE: u64 = 2;
const INIT_STAGE: u64 = 3;
const HEAD_STAGE: u64 = 4;
const TRAIN_STAGE: u64 = 5;
const PRETRAIN_STAGE: u64 = 6;
const MIXING_STAGE: u64 = 7;

fn train_texts(data: &DataSection) -> Result<Vec<String>> {
    let d = load_dataset(&data.train, data.format, data.num_classes, Split::Train)?;
    Ok(d.examples.into_iter().map(|e| e.text).collect())
}

/// Loads the configured vocabulary, or builds one from every training text
/// the config mentions.
pub fn prepare_vocab(cfg: &ExperimentConfig) -> Result<Vocabulary> {
    if let Some(p) = &cfg.vocab.path {
        return Vocabulary::load(p);
    }
    let mut texts = Vec::new();
    if let Some(d) = &cfg.data {
        texts.extend(train_texts(d)?);
    }
    if let Some(mt) = &cfg.multitask {
        for t in &mt.tasks {
            texts.extend(train_texts(t)?);
        }
    }
    if let Some(pt) = &cfg.pretrain {
        for s in &pt.sources {
            let d = load_dataset(&s.train, s.format, None, Split::Train)?;
            texts.extend(d.examples.into_iter().map(|e| e.text));
        }
    }
    if texts.is_empty() {
        return Err(Error::InvalidConfig("no vocabulary path and no training texts to build one".into()));
    }
    build_vocab(&texts, cfg.vocab.size)
}

/// Encoded train / validation / test splits of one task.
#[derive(Clone, Debug)]
pub struct TaskSplits {
    pub name: String,
    pub num_classes: usize,
    pub train: Vec<EncodedExample>,
    pub validation: Vec<EncodedExample>,
    pub test: Option<Vec<EncodedExample>>,
}

pub fn prepare_task(
    data: &DataSection,
    validation_fraction: f64,
    few_shot: Option<f64>,
    vocab: &Vocabulary,
    seed: u64,
) -> Result<TaskSplits> {
    let full = load_dataset(&data.train, data.format, data.num_classes, Split::Train)?;
    let (train, validation) = split_validation(&full, validation_fraction, stage_seed(seed, SPLIT_STAGE))?;
    let train = match few_shot {
        Some(p) => subsample(&train, p, stage_seed(seed, FEW_SHOT_STAGE))?,
        None => train,
    };
    let test = data
        .test
        .as_ref()
        .map(|p| load_dataset(p, data.format, Some(full.num_classes), Split::Test))
        .transpose()?;
    Ok(TaskSplits {
        name: data.task_name(),
        num_classes: full.num_classes,
        train: train.encode(vocab),
        validation: validation.encode(vocab),
        test: test.map(|t| t.encode(vocab)),
    })
}

/// The configured checkpoint, or a fresh model sized for `vocab`.
pub fn initial_model(cfg: &ExperimentConfig, vocab: &Vocabulary) -> Result<EncoderModel<f32>> {
    let model = match &cfg.init_checkpoint {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if let Some(h) = &ckpt.vocab_hash {
                if *h != vocab.hash() {
                    return Err(Error::Checkpoint(format!(
                        "{} was trained with a different vocabulary",
                        p.display()
                    )));
                }
            }
            EncoderModel::from_checkpoint(&ckpt)?
        }
        None => {
            let config = cfg.model.encoder_config(vocab.len(), cfg.recipe.dropout);
            EncoderModel::new(config, &mut Rng::new(stage_seed(cfg.seed, INIT_STAGE)))?
        }
    };
    if model.config.vocab_size != vocab.len() {
        return Err(Error::InvalidConfig(format!(
            "model vocabulary {} does not match vocabulary file {}",
            model.config.vocab_size,
            vocab.len()
        )));
    }
    Ok(model)
}

fn pretrain_sources(cfg: &ExperimentConfig) -> Result<Vec<SourceDocuments>> {
    let pt = cfg.pretrain.as_ref().expect("pretrain section");
    let load = |path: &Path, format| -> Result<Vec<String>> {
        Ok(load_dataset(path, format, None, Split::Train)?
            .examples
            .into_iter()
            .map(|e| e.text)
            .collect())
    };
    let mut out = Vec::new();
    for s in &pt.sources {
        out.push(SourceDocuments {
            name: s.name.clone(),
            train: load(&s.train, s.format)?,
            test: s.test.as_deref().map(|p| load(p, s.format)).transpose()?.unwrap_or_default(),
        });
    }
    if let Some(d) = &cfg.data {
        let name = d.task_name();
        if !out.iter().any(|s| s.name == name) {
            out.push(SourceDocuments {
                name,
                train: load(&d.train, d.format)?,
                test: d.test.as_deref().map(|p| load(p, d.format)).transpose()?.unwrap_or_default(),
            });
        }
    }
    Ok(out)
}

/// Pre-training corpus for the config's scope.
pub fn pretrain_corpus(cfg: &ExperimentConfig) -> Result<Corpus> {
    let pt = cfg
        .pretrain
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no [pretrain] section".into()))?;
    let datasets = if pt.datasets.is_empty() {
        let d = cfg
            .data
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("pretrain.datasets is empty and there is no [data]".into()))?;
        vec![d.task_name()]
    } else {
        pt.datasets.clone()
    };
    let scope = PretrainScope {
        kind: pt.scope,
        datasets,
    };
    scope.validate(&Default::default())?;
    assemble_corpus(&scope, &pretrain_sources(cfg)?, &pt.dedup_pairs, pt.language)
}

/// Runs the `[pretrain]` stage on `model`, saving checkpoints into `out` when given.
pub fn run_pretrain_stage(
    cfg: &ExperimentConfig,
    vocab: &Vocabulary,
    model: &mut EncoderModel<f32>,
    out: Option<&Path>,
    log: &mut MetricsLog,
) -> Result<PretrainReport> {
    let corpus = pretrain_corpus(cfg)?;
    let pt = cfg.pretrain.as_ref().expect("checked by pretrain_corpus");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        corpus.save(dir.join("corpus.txt"))?;
    }
    let tokenized = corpus.tokenize(vocab);
    let pc = pt.pretrain_config(stage_seed(cfg.seed, PRETRAIN_STAGE));
    let hash = vocab.hash();
    let report = further_pretrain(model, &tokenized, &pc, |step, m| {
        if let Some(dir) = out {
            m.to_checkpoint(Some(hash.clone()), step as u64, serde_json::Value::Null)?
                .save(dir.join(format!("pretrain-step{step}.ckpt")))?;
        }
        Ok(())
    })?;
    let every = (pc.steps / 100).max(1);
    for s in &report.steps {
        if s.step % every == 0 || s.step == pc.steps {
            log.push(MetricsRecord {
                run: format!("{}/pretrain", cfg.name),
                step: s.step,
                epoch: None,
                split: Split::Train,
                loss: Some(s.loss),
                error_rate: None,
                learning_rate: s.lr,
                wall_clock: 0.0,
            });
        }
    }
    Ok(report)
}

/// Output of `pretrain`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub documents: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub checkpoints: Vec<usize>,
}

pub fn run_pretrain(cfg: &ExperimentConfig, out: &Path) -> Result<PretrainSummary> {
    fs::create_dir_all(out)?;
    let vocab = prepare_vocab(cfg)?;
    vocab.save(out.join(VOCAB_FILE))?;
    let mut model = initial_model(cfg, &vocab)?;
    let mut log = MetricsLog::new();
    let report = run_pretrain_stage(cfg, &vocab, &mut model, Some(out), &mut log)?;
    log.write(out.join(METRICS_FILE))?;
    let summary = PretrainSummary {
        documents: pretrain_corpus(cfg)?.documents.len(),
        steps: report.steps.len(),
        final_loss: report.steps.last().map(|s| s.loss),
        checkpoints: report.checkpoints,
    };
    write_json(out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Head for `task`, reusing one already present in the model.
fn classifier_for(model: EncoderModel<f32>, task: &TaskSplits, recipe: &TrainingRecipe, seed: u64) -> Result<Classifier> {
    if model.params.id(&ClassifierHead::weight_name(&task.name)).is_some() {
        let reader = DocumentReader::find(recipe.strategy, recipe.layers, &model)?;
        let head = ClassifierHead::find(&model, &task.name)?;
        return Ok(Classifier { model, head, reader });
    }
    Classifier::attach(
        model,
        &task.name,
        task.num_classes,
        recipe.strategy,
        recipe.layers,
        &mut Rng::new(stage_seed(seed, HEAD_STAGE)),
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneSummary {
    pub task: String,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub pretrain_steps: Option<usize>,
    pub outcome: FinetuneOutcome,
}

/// Optional further pre-training, then fine-tuning on `[data]`. Writes the
/// vocabulary, metrics, best checkpoint and a summary into `out`.
pub fn run_finetune(cfg: &ExperimentConfig, out: &Path) -> Result<FinetuneSummary> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no [data] section".into()))?;
    fs::create_dir_all(out)?;
    let vocab = prepare_vocab(cfg)?;
    vocab.save(out.join(VOCAB_FILE))?;
    let task = prepare_task(data, cfg.validation_fraction, cfg.few_shot, &vocab, cfg.seed)?;
    let mut model = initial_model(cfg, &vocab)?;
    let mut log = MetricsLog::new();
    let pretrain_steps = match cfg.pretrain {
        Some(_) => Some(run_pretrain_stage(cfg, &vocab, &mut model, Some(out), &mut log)?.steps.len()),
        None => None,
    };
    let mut clf = classifier_for(model, &task, &cfg.recipe, cfg.seed)?;
    let outcome = fine_tune(
        &mut clf,
        &task.train,
        &task.validation,
        task.test.as_deref(),
        &cfg.recipe,
        stage_seed(cfg.seed, TRAIN_STAGE),
        &cfg.name,
        &mut log,
    )?;
    log.write(out.join(METRICS_FILE))?;
    clf.to_checkpoint(Some(vocab.hash()), outcome.steps as u64)?
        .save(out.join(MODEL_FILE))?;
    let summary = FinetuneSummary {
        task: task.name,
        train_examples: task.train.len(),
        validation_examples: task.validation.len(),
        pretrain_steps,
        outcome,
    };
    write_json(out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskResult {
    pub task: String,
    pub multitask_test_error: Option<f64>,
    pub refined_test_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultitaskSummary {
    pub report: MultiTaskReport,
    pub tasks: Vec<TaskResult>,
}

/// Joint training over `[multitask].tasks`, then optional per-task refinement.
/// Writes `model.ckpt` (joint) and `refined-<task>.ckpt` for each task.
pub fn run_multitask(cfg: &ExperimentConfig, out: &Path) -> Result<MultitaskSummary> {
    let mt_cfg = cfg
        .multitask
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no [multitask] section".into()))?;
    fs::create_dir_all(out)?;
    let vocab = prepare_vocab(cfg)?;
    vocab.save(out.join(VOCAB_FILE))?;
    let splits = mt_cfg
        .tasks
        .iter()
        .map(|t| prepare_task(t, cfg.validation_fraction, cfg.few_shot, &vocab, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let model = initial_model(cfg, &vocab)?;
    let task_classes: Vec<(&str, usize)> = splits.iter().map(|t| (t.name.as_str(), t.num_classes)).collect();
    let mut mt = MultiTaskModel::attach(
        model,
        &task_classes,
        cfg.recipe.strategy,
        cfg.recipe.layers,
        &mut Rng::new(stage_seed(cfg.seed, HEAD_STAGE)),
    )?;
    let tasks: Vec<TaskData> = splits
        .iter()
        .map(|t| TaskData {
            name: t.name.clone(),
            train: t.train.clone(),
            validation: t.validation.clone(),
        })
        .collect();
    let mixing = MixingStrategy {
        kind: mt_cfg.mixing,
        seed: stage_seed(cfg.seed, MIXING_STAGE),
    };
    let mut log = MetricsLog::new();
    let report = multitask_finetune(
        &mut mt,
        &tasks,
        &cfg.recipe,
        mixing,
        stage_seed(cfg.seed, TRAIN_STAGE),
        &cfg.name,
        &mut log,
    )?;
    mt.to_checkpoint(Some(vocab.hash()), report.steps as u64)?
        .save(out.join(MODEL_FILE))?;
    let rate = mt_cfg.refine_rate.unwrap_or_else(|| default_refine_rate(&cfg.recipe));
    let mut results = Vec::new();
    for (t, split) in tasks.iter().zip(&splits) {
        let test = split.test.as_deref();
        let eval = |m: &MultiTaskModel| -> Result<Option<f64>> {
            test.map(|d| m.evaluate(&t.name, d, cfg.recipe.eval_batch_size).map(|e| e.error_rate))
                .transpose()
        };
        let multitask_test_error = eval(&mt)?;
        let refined_test_error = if mt_cfg.refine && !report.diverged {
            let (refined, outcome) =
                per_task_refine(&mt, t, test, &cfg.recipe, rate, stage_seed(cfg.seed, TRAIN_STAGE), &mut log)?;
            refined
                .to_checkpoint(Some(vocab.hash()), outcome.steps as u64)?
                .save(out.join(format!("refined-{}.ckpt", t.name)))?;
            eval(&refined)?
        } else {
            None
        };
        results.push(TaskResult {
            task: t.name.clone(),
            multitask_test_error,
            refined_test_error,
        });
    }
    log.write(out.join(METRICS_FILE))?;
    let summary = MultitaskSummary { report, tasks: results };
    write_json(out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// One `(lr, ξ)` cell of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub validation_error: Option<f64>,
    pub test_error: Option<f64>,
    pub diverged: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
}

fn cell(v: Option<f64>, diverged: bool) -> String {
    match v {
        _ if diverged => "diverged".into(),
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

impl GridReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("learning_rate\tdecay_factor\tvalidation_error\ttest_error\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:e}\t{}\t{}\t{}",
                r.learning_rate,
                r.decay_factor,
                cell(r.validation_error, r.diverged),
                cell(r.test_error, r.diverged)
            );
        }
        s
    }
}

/// Prepared inputs shared by every cell of a grid or sweep.
pub struct GridInputs {
    pub task: TaskSplits,
    pub model: EncoderModel<f32>,
}

pub fn prepare_grid(cfg: &ExperimentConfig) -> Result<GridInputs> {
    let data = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no [data] section".into()))?;
    let vocab = prepare_vocab(cfg)?;
    let task = prepare_task(data, cfg.validation_fraction, cfg.few_shot, &vocab, cfg.seed)?;
    let mut model = initial_model(cfg, &vocab)?;
    if cfg.pretrain.is_some() {
        run_pretrain_stage(cfg, &vocab, &mut model, None, &mut MetricsLog::new())?;
    }
    Ok(GridInputs { task, model })
}

fn run_cell(
    cfg: &ExperimentConfig,
    inputs: &GridInputs,
    recipe: &TrainingRecipe,
    run: &str,
) -> Result<(FinetuneOutcome, MetricsLog)> {
    let mut clf = classifier_for(inputs.model.clone(), &inputs.task, recipe, cfg.seed)?;
    let mut log = MetricsLog::new();
    let outcome = fine_tune(
        &mut clf,
        &inputs.task.train,
        &inputs.task.validation,
        inputs.task.test.as_deref(),
        recipe,
        stage_seed(cfg.seed, TRAIN_STAGE),
        run,
        &mut log,
    )?;
    Ok((outcome, log))
}

fn map_cells<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> Result<O> + Sync + Send) -> Result<Vec<O>> {
    if strict_deterministic() {
        items.iter().map(f).collect()
    } else {
        items.par_iter().map(f).collect()
    }
}

/// Trains one seeded run per `(lr, ξ)` pair, in row-major order. A diverged
/// run is reported, not raised.
pub fn run_grid(
    cfg: &ExperimentConfig,
    inputs: &GridInputs,
    learning_rates: &[f64],
    decay_factors: &[f64],
) -> Result<(GridReport, MetricsLog)> {
    if learning_rates.is_empty() || decay_factors.is_empty() {
        return Err(Error::InvalidConfig("grid lists must be non-empty".into()));
    }
    let cells: Vec<(f64, f64)> = learning_rates
        .iter()
        .flat_map(|&lr| decay_factors.iter().map(move |&xi| (lr, xi)))
        .collect();
    let results = map_cells(&cells, |&(lr, xi)| {
        let recipe = TrainingRecipe {
            base_lr: lr,
            decay_factor: xi,
            ..cfg.recipe.clone()
        };
        run_cell(cfg, inputs, &recipe, &format!("lr={lr:e},xi={xi}"))
    })?;
    let mut log = MetricsLog::new();
    let mut report = GridReport::default();
    for (&(lr, xi), (o, l)) in cells.iter().zip(results) {
        log.extend(l);
        report.rows.push(GridRow {
            learning_rate: lr,
            decay_factor: xi,
            validation_error: o.best_validation_error,
            test_error: o.test_error,
            diverged: o.diverged,
        });
    }
    Ok((report, log))
}

/// Per-epoch train and test error for one learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub train_error: Option<f64>,
    pub test_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub learning_rate: f64,
    pub points: Vec<CurvePoint>,
    pub diverged: bool,
}

/// One run per learning rate with full per-epoch train and test evaluation.
/// The test split falls back to validation when `[data].test` is absent.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    inputs: &GridInputs,
    learning_rates: &[f64],
) -> Result<(Vec<LearningCurve>, MetricsLog)> {
    if learning_rates.is_empty() {
        return Err(Error::InvalidConfig("sweep list must be non-empty".into()));
    }
    let results = map_cells(learning_rates, |&lr| {
        let recipe = TrainingRecipe {
            base_lr: lr,
            eval_train: true,
            ..cfg.recipe.clone()
        };
        let mut inputs_view = GridInputs {
            task: inputs.task.clone(),
            model: inputs.model.clone(),
        };
        if inputs_view.task.test.is_none() {
            inputs_view.task.test = Some(inputs_view.task.validation.clone());
        }
        run_cell(cfg, &inputs_view, &recipe, &format!("lr={lr:e}"))
    })?;
    let mut log = MetricsLog::new();
    let mut curves = Vec::new();
    for (&lr, (o, l)) in learning_rates.iter().zip(results) {
        let mut points: Vec<CurvePoint> = Vec::new();
        for r in &l.records {
            let Some(epoch) = r.epoch else { continue };
            if points.last().is_none_or(|p| p.epoch != epoch) {
                points.push(CurvePoint {
                    epoch,
                    train_error: None,
                    test_error: None,
                });
            }
            let p = points.last_mut().expect("pushed");
            match r.split {
                Split::Train => p.train_error = r.error_rate,
                Split::Test => p.test_error = r.error_rate,
                Split::Validation => {}
            }
        }
        curves.push(LearningCurve {
            learning_rate: lr,
            points,
            diverged: o.diverged,
        });
        log.extend(l);
    }
    Ok((curves, log))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSummary {
    pub grid: GridReport,
    pub sweep: Vec<LearningCurve>,
}

/// The `(lr, ξ)` grid and the lr sweep from `[grid]` (defaults when absent).
/// Writes `grid.tsv`, `curves.jsonl`, `metrics.jsonl` and `summary.json`.
pub fn run_grid_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<GridSummary> {
    fs::create_dir_all(out)?;
    let g = cfg.grid.clone().unwrap_or_default();
    let inputs = prepare_grid(cfg)?;
    let (grid, mut log) = run_grid(cfg, &inputs, &g.learning_rates, &g.decay_factors)?;
    fs::write(out.join(GRID_FILE), grid.to_tsv())?;
    let sweep = if g.sweep.is_empty() {
        Vec::new()
    } else {
        let (curves, sweep_log) = run_sweep(cfg, &inputs, &g.sweep)?;
        sweep_log.write(out.join(CURVES_FILE))?;
        log.extend(sweep_log);
        curves
    };
    log.write(out.join(METRICS_FILE))?;
    let summary = GridSummary { grid, sweep };
    write_json(out.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}
