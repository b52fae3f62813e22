use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::table::{RawTable, RawValues};
use super::{DataError, Result};
use crate::autodiff::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericScaler {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation over the training rows.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub name: String,
    /// Sorted training categories; position = one-hot column within the block.
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoding {
    pub column: String,
    /// Training-split mean of the target per category.
    pub table: BTreeMap<String, f64>,
}

/// Everything needed to encode rows exactly as the training split was encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessState {
    pub numeric: Vec<NumericScaler>,
    pub categorical: Vec<CategoryMap>,
    pub target_encoding: Option<TargetEncoding>,
    pub fidelity_feature: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericFeature {
    pub name: String,
    pub column: usize,
    /// Variance of the encoded column on the training split; fixes the
    /// Gaussian reconstruction likelihood for this feature.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalBlock {
    pub name: String,
    pub start: usize,
    pub width: usize,
}

/// Column layout of the encoded matrix: numeric features first, then one-hot blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub numeric: Vec<NumericFeature>,
    pub categorical: Vec<CategoricalBlock>,
    /// Index into `numeric` of the fidelity feature.
    pub fidelity: usize,
}

impl FeatureLayout {
    pub fn n_numeric(&self) -> usize {
        self.numeric.len()
    }

    pub fn width(&self) -> usize {
        self.numeric.len() + self.categorical.iter().map(|b| b.width).sum::<usize>()
    }

    pub fn numeric_variances(&self) -> Vec<f64> {
        self.numeric.iter().map(|f| f.variance).collect()
    }

    pub fn fidelity_column(&self) -> usize {
        self.numeric[self.fidelity].column
    }
}

/// Encoded covariates with binary target, sensitive attribute and label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub x: Matrix,
    pub y: Vec<bool>,
    pub s: Vec<bool>,
    /// `true` where the target label may be used for training.
    pub label_mask: Vec<bool>,
    pub layout: FeatureLayout,
}

impl EncodedDataset {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `indices` as a new dataset (layout shared).
    pub fn select(&self, indices: &[usize]) -> EncodedDataset {
        EncodedDataset {
            x: self.x.select(ndarray::Axis(0), indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            s: indices.iter().map(|&i| self.s[i]).collect(),
            label_mask: indices.iter().map(|&i| self.label_mask[i]).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn fidelity_values(&self) -> Vec<f64> {
        self.x.column(self.layout.fidelity_column()).to_vec()
    }
}

fn population_moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

fn check_indices(indices: &[usize], rows: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= rows) {
        Some(&index) => Err(DataError::IndexOutOfRange { index, rows }),
        None => Ok(()),
    }
}

/// Fits scalers, category lists and the optional target encoding on `train` rows only.
pub fn fit(table: &RawTable, train: &[usize]) -> Result<PreprocessState> {
    if train.is_empty() {
        return Err(DataError::EmptyTrainingSet);
    }
    check_indices(train, table.n_rows())?;
    let schema = &table.schema;
    let mut numeric = Vec::new();
    let mut categorical = Vec::new();
    let mut target_encoding = None;

    for column in &table.covariates {
        match &column.values {
            RawValues::Numeric(values) => {
                let (mean, var) = population_moments(train.iter().map(|&i| values[i]));
                if !(var > 0.0) {
                    return Err(DataError::ZeroVariance(column.name.clone()));
                }
                numeric.push(NumericScaler {
                    name: column.name.clone(),
                    mean,
                    std: var.sqrt(),
                });
            }
            RawValues::Categorical(values) => {
                if schema.target_encoded.as_deref() == Some(&column.name) {
                    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
                    for &i in train {
                        let entry = sums.entry(values[i].clone()).or_default();
                        entry.0 += f64::from(u8::from(table.target[i]));
                        entry.1 += 1;
                    }
                    let encoding: BTreeMap<String, f64> = sums
                        .into_iter()
                        .map(|(k, (sum, count))| (k, sum / count as f64))
                        .collect();
                    let (mean, var) =
                        population_moments(train.iter().map(|&i| encoding[&values[i]]));
                    if !(var > 0.0) {
                        return Err(DataError::ZeroVariance(column.name.clone()));
                    }
                    numeric.push(NumericScaler {
                        name: column.name.clone(),
                        mean,
                        std: var.sqrt(),
                    });
                    target_encoding = Some(TargetEncoding {
                        column: column.name.clone(),
                        table: encoding,
                    });
                } else {
                    let mut categories: Vec<String> =
                        train.iter().map(|&i| values[i].clone()).collect();
                    categories.sort();
                    categories.dedup();
                    if categories.len() < 2 {
                        return Err(DataError::TooFewCategories {
                            column: column.name.clone(),
                            count: categories.len(),
                        });
                    }
                    categorical.push(CategoryMap {
                        name: column.name.clone(),
                        categories,
                    });
                }
            }
        }
    }

    Ok(PreprocessState {
        numeric,
        categorical,
        target_encoding,
        fidelity_feature: schema.fidelity_feature_name().to_string(),
    })
}

/// Encodes every row of `table` with a fitted state. Deterministic given the state.
///
/// The label mask is all `true`; see [`super::mask_labels`].
pub fn transform(
    table: &RawTable,
    state: &PreprocessState,
    train: &[usize],
) -> Result<EncodedDataset> {
    check_indices(train, table.n_rows())?;
    let n = table.n_rows();
    let n_numeric = state.numeric.len();
    let width = n_numeric
        + state
            .categorical
            .iter()
            .map(|c| c.categories.len())
            .sum::<usize>();
    let mut x = Array2::<f64>::zeros((n, width));

    let mut numeric_slot = 0;
    let mut block_slot = 0;
    let mut offset = n_numeric;
    let mut blocks = Vec::new();
    for column in &table.covariates {
        match &column.values {
            RawValues::Numeric(values) => {
                let scaler = &state.numeric[numeric_slot];
                for (r, v) in values.iter().enumerate() {
                    x[[r, numeric_slot]] = (v - scaler.mean) / scaler.std;
                }
                numeric_slot += 1;
            }
            RawValues::Categorical(values) => {
                let encoded = state
                    .target_encoding
                    .as_ref()
                    .filter(|te| te.column == column.name);
                if let Some(te) = encoded {
                    let scaler = &state.numeric[numeric_slot];
                    for (r, v) in values.iter().enumerate() {
                        let raw = te.table.get(v).ok_or_else(|| DataError::NovelCategory {
                            column: column.name.clone(),
                            value: v.clone(),
                        })?;
                        x[[r, numeric_slot]] = (raw - scaler.mean) / scaler.std;
                    }
                    numeric_slot += 1;
                } else {
                    let map = &state.categorical[block_slot];
                    for (r, v) in values.iter().enumerate() {
                        let k = map.categories.binary_search(v).map_err(|_| {
                            DataError::NovelCategory {
                                column: column.name.clone(),
                                value: v.clone(),
                            }
                        })?;
                        x[[r, offset + k]] = 1.0;
                    }
                    blocks.push(CategoricalBlock {
                        name: map.name.clone(),
                        start: offset,
                        width: map.categories.len(),
                    });
                    offset += map.categories.len();
                    block_slot += 1;
                }
            }
        }
    }

    let numeric: Vec<NumericFeature> = state
        .numeric
        .iter()
        .enumerate()
        .map(|(column, scaler)| {
            let (_, variance) = population_moments(train.iter().map(|&i| x[[i, column]]));
            NumericFeature {
                name: scaler.name.clone(),
                column,
                variance: if variance > 0.0 { variance } else { 1.0 },
            }
        })
        .collect();
    let fidelity = numeric
        .iter()
        .position(|f| f.name == state.fidelity_feature)
        .ok_or_else(|| {
            DataError::Schema(format!(
                "fidelity feature `{}` is not numeric",
                state.fidelity_feature
            ))
        })?;

    Ok(EncodedDataset {
        x,
        y: table.target.clone(),
        s: table.sensitive.clone(),
        label_mask: vec![true; n],
        layout: FeatureLayout {
            numeric,
            categorical: blocks,
            fidelity,
        },
    })
}

pub fn fit_transform(
    table: &RawTable,
    train: &[usize],
) -> Result<(EncodedDataset, PreprocessState)> {
    let state = fit(table, train)?;
    let encoded = transform(table, &state, train)?;
    Ok((encoded, state))
}
