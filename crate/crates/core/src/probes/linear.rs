use nalgebra::{DMatrix, DVector};

use super::{ProbeError, Result};
use crate::autodiff::Matrix;

/// Ordinary least squares with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearProbe {
    /// Minimum-norm least-squares solution via SVD, so collinear columns are fine.
    pub fn fit(x: &Matrix, target: &[f64]) -> Result<Self> {
        super::check_rows(x, target.len())?;
        let (n, d) = x.dim();
        let mut aug = DMatrix::<f64>::from_element(n, d + 1, 1.0);
        for ((i, j), v) in x.indexed_iter() {
            aug[(i, j)] = *v;
        }
        let b = DVector::from_column_slice(target);
        let svd = aug.svd(true, true);
        let max_sv = svd.singular_values.max();
        let eps = max_sv * (n.max(d + 1) as f64) * f64::EPSILON;
        let solution = svd
            .solve(&b, eps)
            .map_err(|e| ProbeError::Linalg(e.to_string()))?;
        if solution.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite("linear regression"));
        }
        Ok(LinearProbe {
            weights: solution.iter().take(d).copied().collect(),
            bias: solution[d],
        })
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.bias + r.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect()
    }
}
