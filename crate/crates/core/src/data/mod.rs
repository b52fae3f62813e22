//! Tabular dataset ingestion and preparation.
//!
//! A [`Schema`] declares every column's kind and role. [`load_csv`] turns a
//! CSV file into a typed [`RawTable`] (dropping rows with missing values),
//! [`fit_transform`] standardizes numeric features and one-hot encodes
//! categorical ones using training rows only, and [`split`],
//! [`mask_labels`] and [`make_batches`] produce the 18:2:5 partition,
//! the semi-supervised label mask and the per-epoch mini-batches.

mod batches;
mod cache;
mod preprocess;
mod schema;
mod split;
pub mod synthetic;
mod table;

pub use batches::{make_batches, Batch};
pub use cache::{read_cache, read_cache_from, write_cache, write_cache_to, CACHE_VERSION};
pub use preprocess::{
    fit, fit_transform, transform, CategoricalBlock, CategoryMap, EncodedDataset, FeatureLayout,
    NumericFeature, NumericScaler, PreprocessState, TargetEncoding,
};
pub use schema::{ColumnKind, ColumnSpec, Role, Schema};
pub use split::{mask_labels, split, Split, SPLIT_RATIO};
pub use table::{load_csv, load_csv_reader, RawColumn, RawTable, RawValues};

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("schema column `{0}` is missing from the CSV header")]
    MissingColumn(String),
    #[error("CSV column `{0}` is not declared in the schema")]
    UnknownColumn(String),
    #[error("column `{column}`, line {line}: cannot parse `{value}` as a number")]
    UnparseableNumeric {
        column: String,
        line: u64,
        value: String,
    },
    #[error("column `{column}` is not binary: found a third value `{value}`")]
    NonBinary { column: String, value: String },
    #[error("column `{column}`: category `{value}` was not seen in the training split")]
    NovelCategory { column: String, value: String },
    #[error("column `{0}` has zero variance on the training split")]
    ZeroVariance(String),
    #[error("categorical column `{column}` has {count} training categories, need at least 2")]
    TooFewCategories { column: String, count: usize },
    #[error("need at least {min} rows, got {actual}")]
    TooFewRows { min: usize, actual: usize },
    #[error("training index set is empty")]
    EmptyTrainingSet,
    #[error("row index {index} out of range for {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("class {class} has {available} training rows, cannot reveal {requested} labels")]
    InsufficientLabels {
        class: bool,
        available: usize,
        requested: usize,
    },
    #[error("invalid dataset cache: {0}")]
    Cache(String),
}

pub type Result<T> = std::result::Result<T, DataError>;
