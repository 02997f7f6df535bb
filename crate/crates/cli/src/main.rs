//! `deepsleep`: prepare data, train, evaluate and inspect the sleep stage
//! scorer.

mod config;
mod evaluate;
mod inspect;
mod prepare;
mod train;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "deepsleep", version, about = "Automatic sleep stage scoring from single-channel EEG")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "deepsleep.toml")]
    config: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Folds trained concurrently by `evaluate` (capped at the core count).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Stop `prepare` at the first recording that fails.
    #[arg(long, global = true)]
    strict: bool,
    /// Let `evaluate` score subjects the checkpoint was trained on.
    #[arg(long, global = true)]
    allow_train_overlap: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the recordings, extract labelled epochs and write the epoch
    /// cache plus a manifest of per-stage counts.
    Prepare,
    /// Pre-train the CNN branches on the class-balanced training epochs.
    Pretrain,
    /// Fine-tune the whole network on the training subjects' sequences.
    Finetune,
    /// Subject-wise cross-validation, or scoring of a checkpoint on
    /// held-out subjects with `--checkpoint`.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated subject ids (default: all, or all held-out).
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
        /// Keep every fold's model under `evaluate/folds/`.
        #[arg(long)]
        save_fold_models: bool,
    },
    /// Per-epoch stages and probabilities plus hypnograms.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
    },
    /// First-layer filter activation maps and LSTM cell traces.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        subjects: Option<Vec<String>>,
        /// Forward LSTM cells to trace.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        cells: Vec<usize>,
    },
    /// Render a stage sequence (tokens or `predict` CSV) as text and SVG.
    Hypnogram {
        input: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        title: Option<String>,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Hypnogram { input, svg, title } = &cli.command {
        return inspect::run_hypnogram(input, svg.as_ref(), title.clone());
    }
    let overrides = Overrides { seed: cli.seed, jobs: cli.jobs };
    let config = RunConfig::load(&cli.config, &overrides)?;
    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create {}", config.output_dir.display()))?;
    match cli.command {
        Command::Prepare => prepare::run(&config, cli.strict),
        Command::Pretrain => train::run_pretrain(&config),
        Command::Finetune => train::run_finetune(&config),
        Command::Evaluate { checkpoint, subjects, save_fold_models } => evaluate::run(
            &config,
            &evaluate::EvaluateArgs {
                checkpoint,
                subjects,
                allow_train_overlap: cli.allow_train_overlap,
                save_fold_models,
            },
        ),
        Command::Predict { checkpoint, subjects } => {
            inspect::run_predict(&config, checkpoint.as_deref(), &subjects)
        }
        Command::Analyze { checkpoint, subjects, cells } => {
            inspect::run_analyze(&config, checkpoint.as_deref(), &subjects, &cells)
        }
        Command::Hypnogram { .. } => unreachable!("handled above"),
    }
}
