//! Feed-forward layers, the Adam optimizer and plateau-based learning-rate
//! scheduling with early stopping.

mod adam;
mod layers;
mod scheduler;

pub use adam::{Adam, AdamConfig};
pub use layers::{bind, DenseLayer, Mlp, Module};
pub use scheduler::{PlateauConfig, PlateauScheduler, SchedulerStep};

use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("non-finite gradient for parameter {index}")]
    NonFiniteGradient { index: usize },
    #[error("expected {expected} gradients, got {actual}")]
    GradientCount { expected: usize, actual: usize },
    #[error("gradient {index} has shape {actual:?}, parameter has {expected:?}")]
    GradientShape {
        index: usize,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("expected {expected} bound parameters, got {actual}")]
    BindingCount { expected: usize, actual: usize },
    #[error("invalid layer dimensions: {0}")]
    Dimensions(String),
}
