//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! The engine is define-by-run: a fresh [`Tape`] is created for every
//! forward pass, operations are appended in execution order, and
//! [`Tape::backward`] walks the recording in exact reverse order. Values
//! are `ndarray` matrices; handles into the tape are the lightweight,
//! copyable [`Var`].
//!
//! Besides the elementwise and linear-algebra primitives, the tape carries
//! fused loss primitives (KL to a standard normal, fixed-variance Gaussian
//! NLL, categorical and binary cross-entropy) with hand-written adjoints.
//! They are numerically stable and cheaper than composing them from
//! `exp`/`log` nodes.

mod tape;

pub use tape::{Gradients, OpKind, Tape, Var};

use thiserror::Error;

/// Dense row-major value carried by every tape node.
pub type Matrix = ndarray::Array2<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: OpKind,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: OpKind, reason: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: OpKind },
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,
    #[error("variable {0} does not belong to this tape")]
    UnknownVar(usize),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
