//! Experiment orchestration: configuration, training, evaluation, sweeps
//! and result aggregation.

mod aggregate;
pub mod cli;
mod config;
mod pipeline;
mod results;
mod sweep;
mod train;

pub use aggregate::{aggregate, write_aggregate, AggregateRow};
pub use config::{
    DataConfig, EvaluationConfig, ExperimentConfig, ModelConfig, RunConfig, TrainingConfig,
};
pub use pipeline::{
    evaluate_checkpoint, execute_run, load_table, prepare, prepare_with_state, run_baseline,
    run_id, EvalKind, PreparedData,
};
pub use results::{
    metrics_csv, read_manifest, read_metrics, write_metrics, ManifestStatus, RunManifest,
    RunResult, MANIFEST_FILE, METRICS_FILE, METRICS_FORMAT_VERSION,
};
pub use sweep::{
    plan_sweep, standard_multipliers, sweep, PlannedRun, RunStatus, SweepGrid, SweepOutcome,
};
pub use train::{train_model, EpochLog, TrainOutcome};

use std::path::PathBuf;

use thiserror::Error;

use crate::data::DataError;
use crate::models::ModelError;
use crate::nn::NnError;
use crate::objectives::ObjectiveError;
use crate::probes::ProbeError;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config error at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("{0}")]
    Invalid(String),
}

impl RunnerError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> RunnerError {
        let path = path.into();
        move |source| RunnerError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, RunnerError>;
