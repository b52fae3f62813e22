use std::path::Path;

use serde::{Deserialize, Serialize};

use super::results::{
    read_manifest, read_metrics, write_atomic, ManifestStatus, MANIFEST_FILE, METRICS_FILE,
};
use super::{Result, RunnerError};
use crate::models::Intervention;
use crate::objectives::Variant;
use crate::probes::{fold_median, Estimator};

/// One row of the long-format results table: fold-median metrics of one
/// estimator on one target for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    /// Reconstruction weight.
    pub alpha: f64,
    pub beta: f64,
    pub latent_dim: usize,
    pub labels_per_class: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub target: String,
    pub policy: Option<Intervention>,
    pub accuracy: Option<f64>,
    pub discrimination: Option<f64>,
    pub error_gap: Option<f64>,
    pub mae: Option<f64>,
    pub run_id: String,
}

/// Reads every completed run under `root` (in directory-name order) and
/// collapses its per-fold metrics to medians.
pub fn aggregate(root: &Path) -> Result<Vec<AggregateRow>> {
    let entries = std::fs::read_dir(root).map_err(RunnerError::io(root))?;
    let mut dirs: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST_FILE).is_file())
        .collect();
    dirs.sort();
    let mut rows = Vec::new();
    for dir in dirs {
        let manifest = read_manifest(&dir.join(MANIFEST_FILE))?;
        if manifest.status != ManifestStatus::Completed {
            continue;
        }
        let objective = &manifest.config.objective;
        let alpha = objective.alpha()?;
        for r in fold_median(&read_metrics(&dir.join(METRICS_FILE))?) {
            rows.push(AggregateRow {
                variant: objective.variant,
                alpha,
                beta: objective.beta(),
                latent_dim: manifest.config.model.latent_dim,
                labels_per_class: manifest.config.training.labels_per_class,
                seed: manifest.seed,
                estimator: r.estimator,
                target: r.target,
                policy: r.policy,
                accuracy: r.accuracy,
                discrimination: r.discrimination,
                error_gap: r.error_gap,
                mae: r.mae,
                run_id: manifest.run_id.clone(),
            });
        }
    }
    Ok(rows)
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| RunnerError::Invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}
