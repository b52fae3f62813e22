use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataConfig, RunConfig};
use super::results::{
    write_manifest, write_metrics, write_trace, ManifestStatus, RunManifest, RunResult,
    CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE, METRICS_FORMAT_VERSION, TRACE_FILE,
};
use super::train::train_model;
use super::{Result, RunnerError};
use crate::data::{self, synthetic, EncodedDataset, PreprocessState, RawTable, Schema, Split};
use crate::models::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, ModelError};
use crate::probes::{
    baseline_eval, evaluate_posterior, evaluate_representation, EvalContext, FidelityTarget,
    MetricRecord,
};

/// A dataset split and encoded for one seed.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub schema_hash: String,
    pub encoded: EncodedDataset,
    pub state: PreprocessState,
    pub split: Split,
}

impl PreparedData {
    pub fn test(&self) -> EncodedDataset {
        self.encoded.select(&self.split.test)
    }
}

/// Configuration and preprocessing stored alongside a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMetadata {
    run_id: String,
    config: RunConfig,
    preprocess: PreprocessState,
}

pub fn load_table(data: &DataConfig) -> Result<RawTable> {
    Ok(match data {
        DataConfig::Csv {
            path,
            schema,
            bundled_schema,
        } => {
            let schema = match (schema, bundled_schema) {
                (Some(p), _) => Schema::load(p)?,
                (None, Some(name)) => Schema::bundled(name)?,
                (None, None) => {
                    return Err(RunnerError::Config {
                        path: "data".into(),
                        reason: "no schema given".into(),
                    })
                }
            };
            data::load_csv(path, &schema)?
        }
        DataConfig::Invariance {
            rows,
            noise,
            data_seed,
        } => synthetic::invariance(*rows, *noise, *data_seed),
        DataConfig::CompasLike { rows, data_seed } => synthetic::compas_like(*rows, *data_seed),
    })
}

fn finish(
    config: &RunConfig,
    seed: u64,
    table: &RawTable,
    split: Split,
    mut encoded: EncodedDataset,
    state: PreprocessState,
) -> Result<PreparedData> {
    let k = config.training.labels_per_class;
    if k > 0 {
        encoded.label_mask = data::mask_labels(&encoded.y, &split.train, k, seed)?;
    }
    Ok(PreparedData {
        schema_hash: table.schema.fingerprint(),
        encoded,
        state,
        split,
    })
}

/// Loads the data, splits it with `seed` and fits preprocessing on the training rows.
pub fn prepare(config: &RunConfig, seed: u64) -> Result<PreparedData> {
    let table = load_table(&config.data)?;
    let split = data::split(table.n_rows(), seed)?;
    let (encoded, state) = data::fit_transform(&table, &split.train)?;
    finish(config, seed, &table, split, encoded, state)
}

/// Like [`prepare`] but reuses a fitted preprocessing state.
pub fn prepare_with_state(
    config: &RunConfig,
    seed: u64,
    state: &PreprocessState,
) -> Result<PreparedData> {
    let table = load_table(&config.data)?;
    let split = data::split(table.n_rows(), seed)?;
    let encoded = data::transform(&table, state, &split.train)?;
    finish(config, seed, &table, split, encoded, state.clone())
}

/// Directory name of a run: variant, fingerprint prefix and seed.
pub fn run_id(config: &RunConfig, seed: u64) -> String {
    let variant = format!("{}", config.objective.variant).to_lowercase();
    format!("{variant}-{}-s{seed}", &config.fingerprint()[..16])
}

fn fidelity<'a>(ds: &'a EncodedDataset, values: &'a [f64]) -> FidelityTarget<'a> {
    FidelityTarget {
        name: &ds.layout.numeric[ds.layout.fidelity].name,
        values,
    }
}

fn representation_records(
    checkpoint: &Checkpoint,
    test: &EncodedDataset,
    ctx: &EvalContext,
    config: &RunConfig,
) -> Result<Vec<MetricRecord>> {
    let z = checkpoint.model.embed(&test.x)?;
    let values = test.fidelity_values();
    Ok(evaluate_representation(
        &z,
        &test.y,
        &test.s,
        fidelity(test, &values),
        ctx,
        &config.evaluation.settings(),
    )?)
}

fn posterior_records(
    checkpoint: &Checkpoint,
    test: &EncodedDataset,
    ctx: &EvalContext,
) -> Result<Vec<MetricRecord>> {
    Ok(evaluate_posterior(
        &checkpoint.model,
        &test.x,
        &test.y,
        &test.s,
        ctx,
    )?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(RunnerError::io(dir))
}

/// Trains one (config, seed) pair, saves the best checkpoint, evaluates the
/// representation and the posterior on the test split and writes the run's
/// result files under `out_root/<run_id>`.
///
/// A diverged run leaves a manifest with status `failed` and returns the error.
pub fn execute_run(config: &RunConfig, seed: u64, out_root: &Path) -> Result<RunResult> {
    let weights = config.validate()?;
    let id = run_id(config, seed);
    let dir = out_root.join(&id);
    create_dir(&dir)?;
    let start = Instant::now();
    let data = prepare(config, seed)?;
    let mut manifest = RunManifest {
        run_id: id.clone(),
        fingerprint: config.fingerprint(),
        seed,
        status: ManifestStatus::Failed,
        config: config.clone(),
        schema_hash: data.schema_hash.clone(),
        best_validation_loss: None,
        best_epoch: None,
        stopped_epoch: None,
        steps: None,
        wall_time_secs: 0.0,
        metrics_format: METRICS_FORMAT_VERSION,
        error: None,
    };

    let outcome = match train_model(config, &weights, &data, seed) {
        Ok(o) => o,
        Err(e) => {
            manifest.wall_time_secs = start.elapsed().as_secs_f64();
            manifest.error = Some(e.to_string());
            write_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
            log::error!("{id}: {e}");
            return Err(e);
        }
    };

    let checkpoint = Checkpoint {
        header: CheckpointHeader {
            schema_hash: data.schema_hash.clone(),
            objective: config.objective,
            architecture: outcome.model.architecture.clone(),
            layout: data.encoded.layout.clone(),
            seed,
            epoch: outcome.best_epoch,
            validation_loss: outcome.best_validation_loss,
            metadata: serde_json::to_value(CheckpointMetadata {
                run_id: id.clone(),
                config: config.clone(),
                preprocess: data.state.clone(),
            })?,
        },
        model: outcome.model,
    };
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&checkpoint_path, &checkpoint)?;

    let test = data.test();
    let ctx = EvalContext {
        model_id: id.clone(),
        seed,
    };
    let mut records = representation_records(&checkpoint, &test, &ctx, config)?;
    records.extend(posterior_records(&checkpoint, &test, &ctx)?);
    write_metrics(&dir.join(METRICS_FILE), &records)?;
    write_trace(&dir.join(TRACE_FILE), &outcome.trace)?;

    manifest.status = ManifestStatus::Completed;
    manifest.best_validation_loss = Some(outcome.best_validation_loss);
    manifest.best_epoch = Some(outcome.best_epoch);
    manifest.stopped_epoch = Some(outcome.epochs_run);
    manifest.steps = Some(outcome.steps);
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    write_manifest(&dir.join(MANIFEST_FILE), &manifest)?;
    log::info!(
        "{id}: best validation loss {:.5} at epoch {} of {} ({:.1}s)",
        outcome.best_validation_loss,
        outcome.best_epoch,
        outcome.epochs_run,
        manifest.wall_time_secs
    );

    Ok(RunResult {
        run_id: id,
        fingerprint: manifest.fingerprint,
        seed,
        best_validation_loss: outcome.best_validation_loss,
        best_epoch: outcome.best_epoch,
        stopped_epoch: outcome.epochs_run,
        steps: outcome.steps,
        checkpoint: checkpoint_path,
        records,
        trace: outcome.trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    /// Probes on the latent means of the test split.
    Representation,
    /// The model's own predictor under each intervention on `s`.
    Posterior,
}

/// Re-evaluates a saved model on the test split of its training seed.
///
/// `dataset` replaces the CSV path recorded in the checkpoint; the schema
/// must match. `probe_seed` reseeds the probes (default: the training seed).
pub fn evaluate_checkpoint(
    path: &Path,
    dataset: Option<&Path>,
    probe_seed: Option<u64>,
    kind: EvalKind,
) -> Result<Vec<MetricRecord>> {
    let checkpoint = load_checkpoint(path, None)?;
    let meta: CheckpointMetadata = serde_json::from_value(checkpoint.header.metadata.clone())?;
    let mut config = meta.config;
    if let Some(dataset) = dataset {
        match &mut config.data {
            DataConfig::Csv { path, .. } => *path = dataset.to_path_buf(),
            _ => {
                return Err(RunnerError::Config {
                    path: "data.source".into(),
                    reason: "--dataset needs a model trained on a csv data source".into(),
                })
            }
        }
    }
    let seed = checkpoint.header.seed;
    let data = prepare_with_state(&config, seed, &meta.preprocess)?;
    if data.schema_hash != checkpoint.header.schema_hash {
        return Err(ModelError::SchemaMismatch {
            expected: data.schema_hash,
            found: checkpoint.header.schema_hash,
        }
        .into());
    }
    if data.encoded.layout != checkpoint.header.layout {
        return Err(RunnerError::Invalid(
            "dataset encodes to a different feature layout than the checkpoint".into(),
        ));
    }
    let test = data.test();
    let ctx = EvalContext {
        model_id: meta.run_id,
        seed: probe_seed.unwrap_or(seed),
    };
    match kind {
        EvalKind::Representation => representation_records(&checkpoint, &test, &ctx, &config),
        EvalKind::Posterior => posterior_records(&checkpoint, &test, &ctx),
    }
}

/// Probe battery on the raw encoded test covariates, plus majority baselines.
pub fn run_baseline(config: &RunConfig, seed: u64) -> Result<Vec<MetricRecord>> {
    config.validate()?;
    let data = prepare(config, seed)?;
    let test = data.test();
    let values = test.fidelity_values();
    let ctx = EvalContext {
        model_id: format!("baseline-{}-s{seed}", &config.fingerprint()[..16]),
        seed,
    };
    Ok(baseline_eval(
        &test.x,
        &test.y,
        &test.s,
        fidelity(&test, &values),
        &ctx,
        &config.evaluation.settings(),
    )?)
}
