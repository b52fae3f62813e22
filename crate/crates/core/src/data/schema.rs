use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DataError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Covariate,
    Target,
    Sensitive,
    /// Present in the file but not used.
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub role: Role,
    /// Raw value mapped to 1 for the binary target and sensitive columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
    /// If set, rows whose value is not listed are dropped at load time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<Vec<String>>,
}

/// Column declarations for one tabular dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    /// Numeric covariate regressed from the representation for fidelity.
    /// Defaults to the first numeric (or target-encoded) covariate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity_feature: Option<String>,
    /// Categorical covariate replaced by the training mean of the target per category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_encoded: Option<String>,
    /// Cell values treated as missing; rows containing one are dropped.
    #[serde(default = "default_missing_tokens")]
    pub missing_tokens: Vec<String>,
    /// Skip CSV columns the schema does not mention instead of failing.
    #[serde(default)]
    pub ignore_unlisted: bool,
}

fn default_missing_tokens() -> Vec<String> {
    vec![String::new(), "?".into(), "NA".into()]
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let schema: Schema =
            toml::from_str(text).map_err(|e| DataError::Schema(e.message().to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// Schema shipped with the crate for one of `adult`, `dutch`, `credit`, `compas`.
    pub fn bundled(name: &str) -> Result<Self> {
        let text = match name {
            "adult" => include_str!("../../schemas/adult.toml"),
            "dutch" => include_str!("../../schemas/dutch.toml"),
            "credit" => include_str!("../../schemas/credit.toml"),
            "compas" => include_str!("../../schemas/compas.toml"),
            other => {
                return Err(DataError::Schema(format!(
                    "no bundled schema named `{other}`"
                )))
            }
        };
        Self::from_toml_str(text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for c in &self.columns {
            if c.name.is_empty() {
                return Err(DataError::Schema("column with empty name".into()));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate column `{}`", c.name)));
            }
            if matches!(c.role, Role::Target | Role::Sensitive) && c.positive.is_none() {
                return Err(DataError::Schema(format!(
                    "binary column `{}` needs a `positive` value",
                    c.name
                )));
            }
        }
        for role in [Role::Target, Role::Sensitive] {
            let count = self.columns.iter().filter(|c| c.role == role).count();
            if count != 1 {
                return Err(DataError::Schema(format!(
                    "exactly one {role:?} column required, found {count}"
                )));
            }
        }
        if !self.columns.iter().any(|c| c.role == Role::Covariate) {
            return Err(DataError::Schema("no covariate columns".into()));
        }
        if let Some(name) = &self.target_encoded {
            match self.column(name) {
                Some(c) if c.role == Role::Covariate && c.kind == ColumnKind::Categorical => {}
                _ => {
                    return Err(DataError::Schema(format!(
                        "target_encoded `{name}` must be a categorical covariate"
                    )))
                }
            }
        }
        if let Some(name) = &self.fidelity_feature {
            if !self.numeric_covariates().any(|c| &c.name == name) {
                return Err(DataError::Schema(format!(
                    "fidelity_feature `{name}` must be a numeric covariate"
                )));
            }
        } else if self.numeric_covariates().next().is_none() {
            return Err(DataError::Schema(
                "no numeric covariate available as fidelity feature".into(),
            ));
        }
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn target(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.role == Role::Target)
            .expect("validated schema has a target")
    }

    pub fn sensitive(&self) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.role == Role::Sensitive)
            .expect("validated schema has a sensitive column")
    }

    pub fn covariates(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| c.role == Role::Covariate)
    }

    /// Whether `column` enters the encoded matrix as a numeric feature.
    pub fn is_numeric_feature(&self, column: &ColumnSpec) -> bool {
        column.kind == ColumnKind::Numeric || self.target_encoded.as_deref() == Some(&column.name)
    }

    /// Covariates encoded as numeric features, in schema order.
    pub fn numeric_covariates(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.covariates().filter(|c| self.is_numeric_feature(c))
    }

    pub fn fidelity_feature_name(&self) -> &str {
        match &self.fidelity_feature {
            Some(name) => name,
            None => {
                &self
                    .numeric_covariates()
                    .next()
                    .expect("validated schema has a numeric covariate")
                    .name
            }
        }
    }

    /// Stable content hash used to pair checkpoints with their schema.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("schema serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
