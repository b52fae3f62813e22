//! Per-run result files.
//!
//! A run directory holds `model.ckpt`, `metrics.csv`, `trace.csv` and
//! `manifest.json`. The manifest is written last, so a directory without
//! one is an interrupted run.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::EpochLog;
use super::{Result, RunnerError};
use crate::probes::MetricRecord;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FORMAT_VERSION: u32 = 1;

fn metrics_banner() -> String {
    format!("# funck-metrics v{METRICS_FORMAT_VERSION}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManifestStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub fingerprint: String,
    pub seed: u64,
    pub status: ManifestStatus,
    pub config: RunConfig,
    pub schema_hash: String,
    pub best_validation_loss: Option<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_epoch: Option<usize>,
    pub steps: Option<u64>,
    pub wall_time_secs: f64,
    pub metrics_format: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Outcome of one completed (config, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run_id: String,
    pub fingerprint: String,
    pub seed: u64,
    pub best_validation_loss: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub records: Vec<MetricRecord>,
    pub trace: Vec<EpochLog>,
}

/// Writes to a sibling temporary file, then renames over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut file = std::fs::File::create(&tmp).map_err(RunnerError::io(&tmp))?;
    file.write_all(bytes).map_err(RunnerError::io(&tmp))?;
    file.sync_all().map_err(RunnerError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(RunnerError::io(path))
}

fn csv_bytes<T: Serialize>(banner: Option<&str>, rows: &[T]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    if let Some(b) = banner {
        writeln!(buf, "{b}").expect("write to vec");
    }
    let mut w = csv::Writer::from_writer(&mut buf);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| RunnerError::Csv(e.into()))?;
    drop(w);
    Ok(buf)
}

/// Metrics file contents: a version line, then a headered CSV.
pub fn metrics_csv(records: &[MetricRecord]) -> Result<Vec<u8>> {
    csv_bytes(Some(&metrics_banner()), records)
}

pub fn write_metrics(path: &Path, records: &[MetricRecord]) -> Result<()> {
    write_atomic(path, &metrics_csv(records)?)
}

/// Reads a metrics file, rejecting other format versions.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let file = std::fs::File::open(path).map_err(RunnerError::io(path))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader
        .read_line(&mut first)
        .map_err(RunnerError::io(path))?;
    if first.trim_end() != metrics_banner() {
        return Err(RunnerError::Invalid(format!(
            "{}: expected `{}` on the first line, found `{}`",
            path.display(),
            metrics_banner(),
            first.trim_end()
        )));
    }
    let mut csv = csv::Reader::from_reader(reader);
    csv.deserialize()
        .map(|r| r.map_err(RunnerError::from))
        .collect()
}

pub(crate) fn write_trace(path: &Path, trace: &[EpochLog]) -> Result<()> {
    write_atomic(path, &csv_bytes(None, trace)?)
}

pub(crate) fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(manifest)?)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read(path).map_err(RunnerError::io(path))?;
    Ok(serde_json::from_slice(&text)?)
}
