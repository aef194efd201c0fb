use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tunebert::experiments::{
    self, load_dataset, subsample, write_dataset, Classifier, CsvFormat, ExperimentConfig, MetricsLog,
    MetricsRecord, Split,
};
use tunebert::multitask::MultiTaskModel;
use tunebert::numeric::{set_strict_deterministic, Checkpoint};
use tunebert::tokenizer::{build_vocab, Vocabulary};

#[derive(Parser)]
#[command(name = "tunebert", version, about = "Fine-tuning recipes for a miniature BERT-style encoder")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed reduction order, no worker threads, zeroed wall-clock fields.
    #[arg(long, global = true)]
    strict_deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Builds a word-piece vocabulary from CSV datasets and/or plain-text files.
    BuildVocab {
        #[arg(long = "csv")]
        csv: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = CsvFormat::CsvLabelText)]
        format: CsvFormat,
        /// Plain-text files, one document or sentence per line.
        #[arg(long = "text")]
        text: Vec<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Further pre-training (MLM + NSP) per the `[pretrain]` section.
    Pretrain {
        #[arg(long)]
        out: PathBuf,
    },
    /// Single-task fine-tuning per `[data]` and `[recipe]`.
    Finetune {
        #[arg(long)]
        out: PathBuf,
    },
    /// Multi-task fine-tuning per `[multitask]`, then per-task refinement.
    Multitask {
        #[arg(long)]
        out: PathBuf,
    },
    /// Error rate of a saved classifier on a labeled CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = CsvFormat::CsvLabelText)]
        format: CsvFormat,
        /// Task head to use for multi-task checkpoints.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Appends the result as one JSON line.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// (lr, decay) grid and lr sweep per `[grid]`.
    Grid {
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified few-shot subset of a CSV dataset.
    Subsample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = CsvFormat::CsvLabelText)]
        format: CsvFormat,
        #[arg(long)]
        proportion: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("this command needs --config")?;
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn eval(
    checkpoint: &Path,
    vocab: &Path,
    data: &Path,
    format: CsvFormat,
    task: Option<&str>,
    batch: usize,
) -> Result<(String, experiments::Evaluation)> {
    let vocab = Vocabulary::load(vocab)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.vocab_hash.as_ref().is_some_and(|h| *h != vocab.hash()) {
        bail!("{} was trained with a different vocabulary", checkpoint.display());
    }
    let labeled = |classes: usize| -> Result<_> {
        Ok(load_dataset(data, format, Some(classes), Split::Test)?.encode(&vocab))
    };
    let (name, ev) = match task {
        Some(t) => {
            let mt = MultiTaskModel::from_checkpoint(&ckpt)?;
            let encoded = labeled(mt.head(t)?.classes)?;
            (t.to_string(), mt.evaluate(t, &encoded, batch)?)
        }
        None => {
            let clf = Classifier::from_checkpoint(&ckpt)?;
            let encoded = labeled(clf.head.classes)?;
            (clf.head.name.clone(), clf.evaluate(&encoded, batch)?)
        }
    };
    Ok((name, ev))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    set_strict_deterministic(cli.strict_deterministic);
    match &cli.command {
        Command::BuildVocab {
            csv,
            format,
            text,
            size,
            out,
        } => {
            let mut texts = Vec::new();
            for p in csv {
                texts.extend(load_dataset(p, *format, None, Split::Train)?.examples.into_iter().map(|e| e.text));
            }
            for p in text {
                let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                texts.extend(s.lines().filter(|l| !l.trim().is_empty()).map(str::to_string));
            }
            if texts.is_empty() {
                bail!("no input texts; pass --csv or --text");
            }
            let vocab = build_vocab(&texts, *size)?;
            vocab.save(out)?;
            println!("{} tokens, hash {}", vocab.len(), vocab.hash());
        }
        Command::Pretrain { out } => print_json(&experiments::run_pretrain(&config(&cli)?, out)?)?,
        Command::Finetune { out } => print_json(&experiments::run_finetune(&config(&cli)?, out)?)?,
        Command::Multitask { out } => print_json(&experiments::run_multitask(&config(&cli)?, out)?)?,
        Command::Grid { out } => {
            let s = experiments::run_grid_experiment(&config(&cli)?, out)?;
            print!("{}", s.grid.to_tsv());
        }
        Command::Eval {
            checkpoint,
            vocab,
            data,
            format,
            task,
            batch_size,
            metrics,
        } => {
            let (name, ev) = eval(checkpoint, vocab, data, *format, task.as_deref(), *batch_size)?;
            println!("{name}\terror_rate={:.4}\tloss={:.6}", ev.error_rate, ev.loss);
            if let Some(path) = metrics {
                let mut log = MetricsLog::new();
                log.push(MetricsRecord {
                    run: name,
                    step: 0,
                    epoch: None,
                    split: Split::Test,
                    loss: Some(ev.loss),
                    error_rate: Some(ev.error_rate),
                    learning_rate: 0.0,
                    wall_clock: 0.0,
                });
                let mut existing = fs::read_to_string(path).unwrap_or_default();
                existing.push_str(&log.to_jsonl()?);
                fs::write(path, existing)?;
            }
        }
        Command::Subsample {
            data,
            format,
            proportion,
            out,
        } => {
            let seed = match (&cli.config, cli.seed) {
                (_, Some(s)) => s,
                (Some(_), None) => config(&cli)?.seed,
                (None, None) => bail!("subsample needs --seed or --config"),
            };
            let d = load_dataset(data, *format, None, Split::Train)?;
            let sub = subsample(&d, *proportion, seed)?;
            write_dataset(out, &sub.examples)?;
            println!("{} of {} examples", sub.len(), d.len());
        }
    }
    Ok(())
}
