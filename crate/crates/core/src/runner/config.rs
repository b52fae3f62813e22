use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Result, RunnerError};
use crate::nn::{AdamConfig, PlateauConfig};
use crate::objectives::{resolve_weights, ObjectiveError, ObjectiveSpec, TermWeights};
use crate::probes::{LogisticConfig, ProbeSettings};

/// Where the table comes from. Selected by the `source` key.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// A CSV file with either a schema file or one of the bundled schemas.
    Csv {
        path: PathBuf,
        #[serde(skip_serializing_if = "Option::is_none")]
        schema: Option<PathBuf>,
        #[serde(skip_serializing_if = "Option::is_none")]
        bundled_schema: Option<String>,
    },
    /// `u ~ N(0,1)`, `s ~ Bern(1/2)`, `v = s + noise * N(0,1)`, `y = 1(u > 0)`.
    Invariance {
        rows: usize,
        noise: f64,
        data_seed: u64,
    },
    /// Recidivism-style table with mixed numeric and categorical covariates.
    CompasLike { rows: usize, data_seed: u64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CsvSource {
    path: PathBuf,
    #[serde(default)]
    schema: Option<PathBuf>,
    #[serde(default)]
    bundled_schema: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InvarianceSource {
    rows: usize,
    #[serde(default = "default_noise")]
    noise: f64,
    #[serde(default)]
    data_seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CompasLikeSource {
    #[serde(default = "default_compas_rows")]
    rows: usize,
    #[serde(default)]
    data_seed: u64,
}

/// Marks a nested field path inside an error message, see [`parse_toml`].
const NESTED_PATH: char = '\u{1f}';

fn nested<T: DeserializeOwned, E: serde::de::Error>(
    table: toml::Table,
) -> std::result::Result<T, E> {
    serde_path_to_error::deserialize(toml::Value::Table(table))
        .map_err(|e| E::custom(format!("{}{NESTED_PATH}{}", e.path(), e.inner())))
}

impl<'de> Deserialize<'de> for DataConfig {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let mut table = toml::Table::deserialize(deserializer)?;
        let source = match table.remove("source") {
            Some(toml::Value::String(s)) => s,
            Some(_) => {
                return Err(D::Error::custom(format!(
                    "source{NESTED_PATH}must be a string"
                )))
            }
            None => return Err(D::Error::missing_field("source")),
        };
        Ok(match source.as_str() {
            "csv" => {
                let c: CsvSource = nested(table)?;
                DataConfig::Csv {
                    path: c.path,
                    schema: c.schema,
                    bundled_schema: c.bundled_schema,
                }
            }
            "invariance" => {
                let c: InvarianceSource = nested(table)?;
                DataConfig::Invariance {
                    rows: c.rows,
                    noise: c.noise,
                    data_seed: c.data_seed,
                }
            }
            "compas_like" => {
                let c: CompasLikeSource = nested(table)?;
                DataConfig::CompasLike {
                    rows: c.rows,
                    data_seed: c.data_seed,
                }
            }
            other => {
                return Err(D::Error::unknown_variant(
                    other,
                    &["csv", "invariance", "compas_like"],
                ))
            }
        })
    }
}

fn default_noise() -> f64 {
    0.5
}

fn default_compas_rows() -> usize {
    crate::data::synthetic::COMPAS_ROWS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 32,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Visible training labels per class; 0 means every label is visible.
    pub labels_per_class: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub scheduler: PlateauConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingConfig {
            max_epochs: 200,
            batch_size: 256,
            learning_rate: adam.learning_rate,
            labels_per_class: 0,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_epsilon: adam.epsilon,
            scheduler: PlateauConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub folds: usize,
    pub trees: usize,
    pub logistic_l2: f64,
    pub logistic_tolerance: f64,
    pub logistic_max_iterations: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let settings = ProbeSettings::default();
        EvaluationConfig {
            folds: settings.folds,
            trees: settings.trees,
            logistic_l2: settings.logistic.l2,
            logistic_tolerance: settings.logistic.tolerance,
            logistic_max_iterations: settings.logistic.max_iterations,
        }
    }
}

impl EvaluationConfig {
    pub fn settings(&self) -> ProbeSettings {
        ProbeSettings {
            folds: self.folds,
            trees: self.trees,
            logistic: LogisticConfig {
                l2: self.logistic_l2,
                tolerance: self.logistic_tolerance,
                max_iterations: self.logistic_max_iterations,
            },
        }
    }
}

/// Everything that determines one run except its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

/// An experiment file: one run configuration plus seeds and an output root.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub run: RunConfig,
}

/// On-disk form of [`ExperimentConfig`] (all keys at top level).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    data: DataConfig,
    objective: ObjectiveSpec,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    training: TrainingConfig,
    #[serde(default)]
    evaluation: EvaluationConfig,
}

impl From<ExperimentFile> for ExperimentConfig {
    fn from(f: ExperimentFile) -> Self {
        ExperimentConfig {
            seeds: f.seeds,
            output_dir: f.output_dir,
            run: RunConfig {
                data: f.data,
                objective: f.objective,
                model: f.model,
                training: f.training,
                evaluation: f.evaluation,
            },
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> RunnerError {
    RunnerError::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Parses TOML into `T`, reporting the dotted path of the offending field.
pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de =
        toml::Deserializer::parse(text).map_err(|e| invalid("<root>", e.message().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let mut path = e.path().to_string();
        let mut reason = e.inner().message().to_string();
        if let Some((inner, rest)) = reason.split_once(NESTED_PATH) {
            if inner != "." {
                path = format!("{path}.{inner}");
            }
            reason = rest.to_string();
        }
        invalid(if path == "." { "<root>".into() } else { path }, reason)
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    /// Checks every constraint not expressed in the types. Returns the resolved loss weights.
    pub fn validate(&self) -> Result<TermWeights> {
        match &self.data {
            DataConfig::Csv {
                schema,
                bundled_schema,
                ..
            } => {
                if schema.is_some() == bundled_schema.is_some() {
                    return Err(invalid(
                        "data",
                        "give exactly one of `schema` and `bundled_schema`",
                    ));
                }
            }
            DataConfig::Invariance { rows, noise, .. } => {
                if *rows < 25 {
                    return Err(invalid("data.rows", "need at least 25 rows"));
                }
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(invalid("data.noise", "must be finite and non-negative"));
                }
            }
            DataConfig::CompasLike { rows, .. } => {
                if *rows < 25 {
                    return Err(invalid("data.rows", "need at least 25 rows"));
                }
            }
        }
        let weights = resolve_weights(&self.objective).map_err(|e| match e {
            ObjectiveError::InvalidSpec { field, reason } => {
                invalid(format!("objective.{field}"), reason)
            }
            other => invalid("objective", other.to_string()),
        })?;
        if self.model.latent_dim == 0 {
            return Err(invalid("model.latent_dim", "must be positive"));
        }
        if self.model.hidden.contains(&0) {
            return Err(invalid("model.hidden", "layer widths must be positive"));
        }
        let t = &self.training;
        if t.max_epochs == 0 {
            return Err(invalid("training.max_epochs", "must be positive"));
        }
        if t.batch_size == 0 {
            return Err(invalid("training.batch_size", "must be positive"));
        }
        if !(t.learning_rate.is_finite() && t.learning_rate > 0.0) {
            return Err(invalid("training.learning_rate", "must be positive"));
        }
        for (name, v) in [("adam_beta1", t.adam_beta1), ("adam_beta2", t.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(invalid(format!("training.{name}"), "must lie in [0, 1)"));
            }
        }
        if !(t.adam_epsilon > 0.0) {
            return Err(invalid("training.adam_epsilon", "must be positive"));
        }
        let s = &t.scheduler;
        if !(s.reduction_factor > 0.0 && s.reduction_factor < 1.0) {
            return Err(invalid(
                "training.scheduler.reduction_factor",
                "must lie in (0, 1)",
            ));
        }
        if s.lr_patience == 0 || s.stop_patience == 0 {
            return Err(invalid(
                "training.scheduler",
                "patience values must be positive",
            ));
        }
        let e = &self.evaluation;
        if e.folds < 2 {
            return Err(invalid("evaluation.folds", "need at least 2 folds"));
        }
        if e.trees == 0 {
            return Err(invalid("evaluation.trees", "must be positive"));
        }
        if !(e.logistic_l2 >= 0.0) {
            return Err(invalid("evaluation.logistic_l2", "must be non-negative"));
        }
        Ok(weights)
    }

    /// Content hash identifying this configuration (independent of seed and output location).
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DataConfig::Csv { path, schema, .. } = &mut self.data {
            *path = resolve(base, path);
            if let Some(s) = schema {
                *s = resolve(base, s);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = parse_toml::<ExperimentFile>(text)?.into();
        config.validate()?;
        Ok(config)
    }

    /// Loads and validates a config file. Relative paths inside are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: ExperimentConfig = parse_toml::<ExperimentFile>(&read_text(path)?)?.into();
        let base = path.parent().unwrap_or(Path::new("."));
        config.run.resolve_paths(base);
        config.output_dir = resolve(base, &config.output_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<TermWeights> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(invalid("seeds", format!("seed {dup} listed twice")));
        }
        self.run.validate()
    }

    /// Replaces the CSV path of a file-backed data source.
    pub fn override_dataset(&mut self, dataset: &Path) -> Result<()> {
        match &mut self.run.data {
            DataConfig::Csv { path, .. } => {
                *path = dataset.to_path_buf();
                Ok(())
            }
            _ => Err(invalid("data.source", "--dataset needs a csv data source")),
        }
    }
}
