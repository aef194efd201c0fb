//! Datasets, few-shot subsets, fine-tuning runs, metrics, experiment
//! configuration, and the learning-rate grids.

mod config;
mod dataset;
mod finetune;
mod metrics;
mod runner;
pub mod toy;

pub use config::{
    DataSection, ExperimentConfig, GridSection, ModelSection, MultitaskSection, PretrainSection, SourceSection,
    VocabSection,
};
pub use dataset::{
    load_dataset, split_validation, subsample, write_dataset, CsvFormat, Dataset, EncodedExample, Example, Split,
};
pub use finetune::{
    argmax, classification_loss, evaluate, fine_tune, task_params, Classifier, Evaluation, FinetuneOutcome,
    TrainingRecipe,
};
pub(crate) use finetune::{optimizer_for, train_step};
pub use metrics::{error_rate, MetricsLog, MetricsRecord};
pub use runner::{
    initial_model, prepare_grid, prepare_task, prepare_vocab, pretrain_corpus, run_finetune, run_grid,
    run_grid_experiment, run_multitask, run_pretrain, run_pretrain_stage, run_sweep, stage_seed, CurvePoint,
    FinetuneSummary, GridInputs, GridReport, GridRow, GridSummary, LearningCurve, MultitaskSummary, PretrainSummary,
    TaskResult, TaskSplits, CURVES_FILE, GRID_FILE, METRICS_FILE, MODEL_FILE, SUMMARY_FILE, VOCAB_FILE,
};
