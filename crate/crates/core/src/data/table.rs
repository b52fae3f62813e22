use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use super::schema::{ColumnKind, Role, Schema};
use super::{DataError, Result};

/// Row counts below this trigger a warning: representations learned from
/// ~1k-row tables tend to be unusable.
const SMALL_DATASET_ROWS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum RawValues {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl RawValues {
    pub fn len(&self) -> usize {
        match self {
            RawValues::Numeric(v) => v.len(),
            RawValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: RawValues,
}

/// Typed covariate columns plus the binary target and sensitive attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    /// Covariates in schema order.
    pub covariates: Vec<RawColumn>,
    pub target: Vec<bool>,
    pub sensitive: Vec<bool>,
    /// Rows removed at load time because of missing values or value filters.
    pub dropped_rows: usize,
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn covariate(&self, name: &str) -> Option<&RawColumn> {
        self.covariates.iter().find(|c| c.name == name)
    }
}

pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_csv_reader(file, schema)
}

/// Reads a headered CSV. Rows with a missing value in any used column are dropped.
pub fn load_csv_reader<R: Read>(reader: R, schema: &Schema) -> Result<RawTable> {
    schema.validate()?;
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();

    let position: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    for c in &schema.columns {
        if !position.contains_key(c.name.as_str()) {
            return Err(DataError::MissingColumn(c.name.clone()));
        }
    }
    if !schema.ignore_unlisted {
        if let Some(extra) = header.iter().find(|h| schema.column(h).is_none()) {
            return Err(DataError::UnknownColumn(extra.clone()));
        }
    }

    let used: Vec<_> = schema
        .columns
        .iter()
        .filter(|c| c.role != Role::Ignore)
        .map(|c| (c, position[c.name.as_str()]))
        .collect();

    let mut covariates: Vec<RawColumn> = schema
        .covariates()
        .map(|c| RawColumn {
            name: c.name.clone(),
            values: match c.kind {
                ColumnKind::Numeric => RawValues::Numeric(Vec::new()),
                ColumnKind::Categorical => RawValues::Categorical(Vec::new()),
            },
        })
        .collect();
    let mut target = Vec::new();
    let mut sensitive = Vec::new();
    let mut binary_values: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    let mut dropped = 0usize;
    let mut excluded = 0usize;

    for record in csv.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let missing = used.iter().any(|(_, idx)| match record.get(*idx) {
            Some(v) => schema.missing_tokens.iter().any(|t| t == v),
            None => true,
        });
        if missing {
            dropped += 1;
            continue;
        }
        let filtered = schema.columns.iter().any(|c| match &c.keep {
            Some(keep) => !keep.iter().any(|k| k == &record[position[c.name.as_str()]]),
            None => false,
        });
        if filtered {
            excluded += 1;
            continue;
        }

        let mut cov = 0;
        for (spec, idx) in &used {
            let value = &record[*idx];
            match spec.role {
                Role::Covariate => {
                    match &mut covariates[cov].values {
                        RawValues::Numeric(v) => {
                            let parsed = value.parse::<f64>().ok().filter(|x| x.is_finite());
                            v.push(parsed.ok_or_else(|| DataError::UnparseableNumeric {
                                column: spec.name.clone(),
                                line,
                                value: value.to_string(),
                            })?);
                        }
                        RawValues::Categorical(v) => v.push(value.to_string()),
                    }
                    cov += 1;
                }
                Role::Target | Role::Sensitive => {
                    let slot = usize::from(spec.role == Role::Sensitive);
                    let seen = &mut binary_values[slot];
                    if !seen.iter().any(|s| s == value) {
                        if seen.len() == 2 {
                            return Err(DataError::NonBinary {
                                column: spec.name.clone(),
                                value: value.to_string(),
                            });
                        }
                        seen.push(value.to_string());
                    }
                    let bit = spec.positive.as_deref() == Some(value);
                    if spec.role == Role::Target {
                        target.push(bit);
                    } else {
                        sensitive.push(bit);
                    }
                }
                Role::Ignore => {}
            }
        }
    }

    if dropped > 0 {
        log::info!(
            "{}: dropped {dropped} rows with missing values",
            schema.name
        );
    }
    if excluded > 0 {
        log::info!("{}: excluded {excluded} rows by value filters", schema.name);
    }
    if target.len() < SMALL_DATASET_ROWS {
        log::warn!(
            "{}: only {} rows; representations learned from tables this small are rarely useful",
            schema.name,
            target.len()
        );
    }

    Ok(RawTable {
        schema: schema.clone(),
        covariates,
        target,
        sensitive,
        dropped_rows: dropped + excluded,
    })
}
