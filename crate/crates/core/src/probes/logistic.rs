use nalgebra::{DMatrix, SymmetricEigen};

use super::{ProbeError, Result};
use crate::autodiff::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticConfig {
    /// Strength of the L2 penalty `l2 / 2 * |w|^2` (bias not penalized).
    pub l2: f64,
    /// Stop when the gradient norm of the mean objective falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1.0,
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

/// L2-regularized logistic regression fitted by full-batch gradient descent.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    x: &'a Matrix,
    y: Vec<f64>,
    l2: f64,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    /// Objective `(sum_i loss_i + l2/2 |w|^2) / n` and its gradient; `theta = [w.., b]`.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let d = theta.len() - 1;
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        for (row, &y) in self.x.rows().into_iter().zip(&self.y) {
            let logit = theta[d] + row.iter().zip(theta).map(|(a, w)| a * w).sum::<f64>();
            loss += softplus(logit) - y * logit;
            let r = sigmoid(logit) - y;
            for (g, a) in grad.iter_mut().zip(row.iter()) {
                *g += r * a;
            }
            grad[d] += r;
        }
        let n = self.n();
        let penalty: f64 = theta[..d].iter().map(|w| w * w).sum::<f64>() * self.l2 / 2.0;
        for (g, w) in grad.iter_mut().zip(&theta[..d]) {
            *g = (*g + self.l2 * w) / n;
        }
        grad[d] /= n;
        ((loss + penalty) / n, grad)
    }

    /// Lipschitz constant of the gradient: `lambda_max([X 1]^T [X 1]) / (4n) + l2 / n`.
    fn lipschitz(&self) -> f64 {
        let (n, d) = self.x.dim();
        let mut aug = DMatrix::<f64>::from_element(n, d + 1, 1.0);
        for ((i, j), v) in self.x.indexed_iter() {
            aug[(i, j)] = *v;
        }
        let gram = aug.transpose() * &aug;
        let top = SymmetricEigen::new(gram).eigenvalues.max();
        (top / 4.0 + self.l2) / self.n()
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

impl LogisticProbe {
    /// Nesterov-accelerated gradient descent with step `1/L` and adaptive
    /// restart whenever the objective increases.
    pub fn fit(x: &Matrix, y: &[bool], config: &LogisticConfig) -> Result<Self> {
        super::check_rows(x, y.len())?;
        let problem = Problem {
            x,
            y: y.iter().map(|&b| f64::from(u8::from(b))).collect(),
            l2: config.l2,
        };
        let step = 1.0 / problem.lipschitz();
        let dim = x.ncols() + 1;
        let mut theta = vec![0.0; dim];
        let mut momentum_point = theta.clone();
        let mut t = 1.0_f64;
        let (mut f_prev, _) = problem.eval(&theta);
        let mut iterations = 0;
        let mut converged = false;

        while iterations < config.max_iterations {
            let (_, grad_theta) = problem.eval(&theta);
            if norm(&grad_theta) < config.tolerance {
                converged = true;
                break;
            }
            iterations += 1;
            let (_, grad) = problem.eval(&momentum_point);
            let next: Vec<f64> = momentum_point
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - step * g)
                .collect();
            let (f_next, _) = problem.eval(&next);
            if f_next > f_prev {
                // restart momentum from the current iterate
                t = 1.0;
                momentum_point.clone_from(&theta);
                continue;
            }
            let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
            let beta = (t - 1.0) / t_next;
            momentum_point = next
                .iter()
                .zip(&theta)
                .map(|(a, b)| a + beta * (a - b))
                .collect();
            theta = next;
            t = t_next;
            f_prev = f_next;
        }
        if !converged {
            let (_, g) = problem.eval(&theta);
            converged = norm(&g) < config.tolerance;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(ProbeError::NonFinite("logistic regression"));
        }
        let bias = theta.pop().expect("bias entry");
        Ok(LogisticProbe {
            weights: theta,
            bias,
            iterations,
            converged,
        })
    }

    pub fn decision(&self, x: &Matrix) -> Vec<f64> {
        x.rows()
            .into_iter()
            .map(|r| self.bias + r.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
            .collect()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<bool> {
        self.decision(x).into_iter().map(|d| d > 0.0).collect()
    }
}
