use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::autodiff::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl Adam {
    pub fn new(config: AdamConfig, shapes: &[(usize, usize)]) -> Self {
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            second: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. All gradients are validated before any parameter moves.
    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix]) -> Result<(), NnError> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(NnError::GradientCount {
                expected: self.first.len(),
                actual: grads.len().min(params.len()),
            });
        }
        for (index, (g, m)) in grads.iter().zip(&self.first).enumerate() {
            if g.dim() != m.dim() {
                return Err(NnError::GradientShape {
                    index,
                    expected: m.dim(),
                    actual: g.dim(),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFiniteGradient { index });
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);

        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / correction1;
                let v_hat = *v / correction2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            });
        }
        Ok(())
    }
}
