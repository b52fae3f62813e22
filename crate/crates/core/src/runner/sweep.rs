use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use super::config::{parse_toml, read_text, ExperimentConfig, RunConfig};
use super::pipeline::{execute_run, run_id};
use super::results::{read_manifest, ManifestStatus, MANIFEST_FILE};
use super::{Result, RunnerError};
use crate::objectives::{ObjectiveSpec, Variant};

/// `4^k` for `k = 0..=5`.
pub fn standard_multipliers() -> Vec<f64> {
    (0..6).map(|k| 4f64.powi(k)).collect()
}

/// Cartesian grid of runs around a base experiment.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Experiment config supplying data, training and evaluation settings.
    pub base: PathBuf,
    pub variants: Vec<Variant>,
    #[serde(default = "standard_multipliers")]
    pub alpha: Vec<f64>,
    #[serde(default = "standard_multipliers")]
    pub beta: Vec<f64>,
    /// Empty means the base config's latent size.
    #[serde(default)]
    pub latent_dims: Vec<usize>,
    /// Empty means the base config's setting.
    #[serde(default)]
    pub labels_per_class: Vec<usize>,
    /// Defaults to the base config's seeds.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

impl SweepGrid {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    /// Loads a grid file; `base` is taken relative to the grid file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut grid = Self::from_toml_str(&read_text(path)?)?;
        if grid.base.is_relative() {
            grid.base = path.parent().unwrap_or(Path::new(".")).join(&grid.base);
        }
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub run_id: String,
    pub config: RunConfig,
    pub seed: u64,
}

fn config_error(path: &str, reason: impl Into<String>) -> RunnerError {
    RunnerError::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

fn reject_duplicates<T: PartialEq + std::fmt::Debug>(name: &str, values: &[T]) -> Result<()> {
    for (i, v) in values.iter().enumerate() {
        if values[..i].contains(v) {
            return Err(config_error(name, format!("{v:?} listed twice")));
        }
    }
    Ok(())
}

/// Enumerates the grid in a fixed order: variant, alpha, beta, latent size,
/// labels per class, seed.
///
/// Grid points that a variant ignores (beta for CPF, alpha for CFB) collapse
/// onto one run. Values listed twice are an error, as they would write to the
/// same output path.
pub fn plan_sweep(grid: &SweepGrid, base: &ExperimentConfig) -> Result<Vec<PlannedRun>> {
    if grid.variants.is_empty() {
        return Err(config_error("variants", "grid needs at least one variant"));
    }
    if grid.alpha.is_empty() || grid.beta.is_empty() {
        return Err(config_error(
            "alpha",
            "alpha and beta lists must be nonempty",
        ));
    }
    let latents = if grid.latent_dims.is_empty() {
        vec![base.run.model.latent_dim]
    } else {
        grid.latent_dims.clone()
    };
    let labels = if grid.labels_per_class.is_empty() {
        vec![base.run.training.labels_per_class]
    } else {
        grid.labels_per_class.clone()
    };
    let seeds = grid.seeds.clone().unwrap_or_else(|| base.seeds.clone());
    if seeds.is_empty() {
        return Err(config_error("seeds", "at least one seed is required"));
    }
    reject_duplicates("variants", &grid.variants)?;
    reject_duplicates("alpha", &grid.alpha)?;
    reject_duplicates("beta", &grid.beta)?;
    reject_duplicates("latent_dims", &latents)?;
    reject_duplicates("labels_per_class", &labels)?;
    reject_duplicates("seeds", &seeds)?;

    let mut planned = Vec::new();
    let mut seen = HashSet::new();
    for &variant in &grid.variants {
        for &alpha in &grid.alpha {
            for &beta in &grid.beta {
                for &latent in &latents {
                    for &k in &labels {
                        let mut config = base.run.clone();
                        config.objective = ObjectiveSpec {
                            predictor_conditions_on_s: base.run.objective.predictor_conditions_on_s,
                            decoder_conditions_on_s: base.run.objective.decoder_conditions_on_s,
                            ..ObjectiveSpec::from_grid(variant, alpha, beta)
                        };
                        config.model.latent_dim = latent;
                        config.training.labels_per_class = k;
                        config.validate().map_err(|e| {
                            config_error(
                                "grid",
                                format!("{variant} alpha={alpha} beta={beta} latent={latent} labels={k}: {e}"),
                            )
                        })?;
                        for &seed in &seeds {
                            let id = run_id(&config, seed);
                            if seen.insert(id.clone()) {
                                planned.push(PlannedRun {
                                    run_id: id,
                                    config: config.clone(),
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(planned)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunStatus {
    Trained {
        steps: u64,
    },
    /// A completed manifest for this run already existed.
    Skipped,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub run_id: String,
    pub seed: u64,
    pub status: RunStatus,
}

fn is_complete(dir: &Path, run: &PlannedRun) -> bool {
    match read_manifest(&dir.join(MANIFEST_FILE)) {
        Ok(m) => {
            m.status == ManifestStatus::Completed && m.seed == run.seed && m.config == run.config
        }
        Err(_) => false,
    }
}

/// Executes planned runs on `jobs` worker threads, skipping runs whose
/// completed manifest is already present. A failed run is reported in its
/// outcome and does not stop the others.
pub fn sweep(runs: &[PlannedRun], out_root: &Path, jobs: usize) -> Result<Vec<SweepOutcome>> {
    std::fs::create_dir_all(out_root).map_err(RunnerError::io(out_root))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunnerError::Invalid(format!("cannot start worker pool: {e}")))?;
    let outcomes = pool.install(|| {
        runs.par_iter()
            .map(|run| {
                let status = if is_complete(&out_root.join(&run.run_id), run) {
                    log::info!("{}: already complete, skipped", run.run_id);
                    RunStatus::Skipped
                } else {
                    match execute_run(&run.config, run.seed, out_root) {
                        Ok(result) => RunStatus::Trained {
                            steps: result.steps,
                        },
                        Err(e) => {
                            log::error!("{}: failed: {e}", run.run_id);
                            RunStatus::Failed(e.to_string())
                        }
                    }
                };
                SweepOutcome {
                    run_id: run.run_id.clone(),
                    seed: run.seed,
                    status,
                }
            })
            .collect()
    });
    Ok(outcomes)
}
