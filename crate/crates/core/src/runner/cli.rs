//! Command-line interface.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::ExperimentConfig;
use super::pipeline::{evaluate_checkpoint, execute_run, run_baseline, EvalKind};
use super::results::metrics_csv;
use super::sweep::{plan_sweep, sweep, RunStatus, SweepGrid};
use super::{aggregate, write_aggregate, Result, RunnerError};
use crate::probes::MetricRecord;

#[derive(Debug, Parser)]
#[command(
    name = "funck",
    version,
    about = "Train and evaluate information-theoretic fair representations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train, checkpoint and evaluate one configuration.
    Train(TrainArgs),
    /// Run every point of a hyperparameter grid, skipping completed runs.
    Sweep(SweepArgs),
    /// Probe the representation of a saved model.
    EvalRepr(EvalArgs),
    /// Evaluate a saved model's predictor under interventions on the sensitive attribute.
    EvalPosterior(EvalArgs),
    /// Probe the raw covariates of the test split.
    Baseline(TrainArgs),
    /// Collect fold-median metrics of all completed runs into one CSV.
    Aggregate(AggregateArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (train) or metrics file (baseline; default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV file replacing the config's dataset path.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Probe seed (default: the training seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics file (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Results directory; the table is written to `<out>/aggregate.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

fn load_config(path: &Path, dataset: Option<&Path>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(d) = dataset {
        config.override_dataset(d)?;
    }
    Ok(config)
}

fn seeds(config: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| config.seeds.clone(), |s| vec![s])
}

fn emit(records: &[MetricRecord], out: Option<&Path>) -> Result<()> {
    let bytes = metrics_csv(records)?;
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(RunnerError::io(path)),
        None => std::io::stdout()
            .write_all(&bytes)
            .map_err(RunnerError::io("<stdout>")),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let config = load_config(&args.config, args.dataset.as_deref())?;
            let out = args.out.unwrap_or_else(|| config.output_dir.clone());
            for seed in seeds(&config, args.seed) {
                let result = execute_run(&config.run, seed, &out)?;
                println!(
                    "{}\tbest_validation_loss={}\tepoch={}/{}\tcheckpoint={}",
                    result.run_id,
                    result.best_validation_loss,
                    result.best_epoch,
                    result.stopped_epoch,
                    result.checkpoint.display()
                );
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let grid = SweepGrid::load(&args.grid)?;
            let base = load_config(&grid.base, args.dataset.as_deref())?;
            let runs = plan_sweep(&grid, &base)?;
            let out = args.out.unwrap_or_else(|| base.output_dir.clone());
            log::info!("sweep: {} runs into {}", runs.len(), out.display());
            let outcomes = sweep(&runs, &out, args.jobs)?;
            let mut failed = Vec::new();
            let (mut trained, mut skipped) = (0, 0);
            for o in &outcomes {
                match &o.status {
                    RunStatus::Trained { .. } => trained += 1,
                    RunStatus::Skipped => skipped += 1,
                    RunStatus::Failed(e) => failed.push(format!("{}: {e}", o.run_id)),
                }
            }
            println!(
                "trained={trained}\tskipped={skipped}\tfailed={}",
                failed.len()
            );
            if failed.is_empty() {
                Ok(())
            } else {
                Err(RunnerError::Invalid(format!(
                    "{} of {} runs failed:\n  {}",
                    failed.len(),
                    outcomes.len(),
                    failed.join("\n  ")
                )))
            }
        }
        Command::EvalRepr(args) => eval(args, EvalKind::Representation),
        Command::EvalPosterior(args) => eval(args, EvalKind::Posterior),
        Command::Baseline(args) => {
            let config = load_config(&args.config, args.dataset.as_deref())?;
            let mut records = Vec::new();
            for seed in seeds(&config, args.seed) {
                records.extend(run_baseline(&config.run, seed)?);
            }
            emit(&records, args.out.as_deref())
        }
        Command::Aggregate(args) => {
            let rows = aggregate(&args.out)?;
            let path = args.out.join("aggregate.csv");
            write_aggregate(&path, &rows)?;
            println!("{} rows written to {}", rows.len(), path.display());
            Ok(())
        }
    }
}

fn eval(args: EvalArgs, kind: EvalKind) -> Result<()> {
    let records = evaluate_checkpoint(&args.checkpoint, args.dataset.as_deref(), args.seed, kind)?;
    emit(&records, args.out.as_deref())
}
