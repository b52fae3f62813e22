//! Stochastic encoder, s-conditional decoder and predictive posterior.
//!
//! The encoder maps encoded covariates `x` to a diagonal Gaussian over the
//! representation `z`. The decoder reconstructs `x` from `z` (and `s`), the
//! predictor is a single logistic layer on `z` (and `s`). Conditioning on
//! `s` is plain concatenation of its real value to `z`, which is what lets
//! the predictor be queried with `s = 0.5`.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader,
    CHECKPOINT_VERSION,
};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Matrix, Tape, Var};
use crate::data::FeatureLayout;
use crate::nn::{bind, DenseLayer, Mlp, Module, NnError};
use crate::objectives::{self, LossBreakdown, LossTerms, ObjectiveError, TermWeights};

/// Bounds applied to the encoder's log standard deviation.
pub const LOG_SIGMA_CLAMP: (f64, f64) = (-7.0, 7.0);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("{0}")]
    Dimensions(String),
    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint was written for schema {found}, expected {expected}")]
    SchemaMismatch { expected: String, found: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Layer sizes of the three networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub decoder_conditions_on_s: bool,
    pub predictor_conditions_on_s: bool,
}

impl Architecture {
    pub fn new(
        input_dim: usize,
        latent_dim: usize,
        hidden: Vec<usize>,
        weights: &TermWeights,
    ) -> Self {
        Architecture {
            input_dim,
            latent_dim,
            hidden,
            decoder_conditions_on_s: weights.decoder_conditions_on_s,
            predictor_conditions_on_s: weights.predictor_conditions_on_s,
        }
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(2 * self.latent_dim);
        dims
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim + usize::from(self.decoder_conditions_on_s)];
        dims.extend(self.hidden.iter().rev());
        dims.push(self.input_dim);
        dims
    }

    fn predictor_in(&self) -> usize {
        self.latent_dim + usize::from(self.predictor_conditions_on_s)
    }
}

/// Per-example posterior parameters, as tape handles.
#[derive(Debug, Clone, Copy)]
pub struct LatentGaussian {
    pub mu: Var,
    pub log_sigma: Var,
}

/// Test-time replacement of the sensitive value fed to the predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intervention {
    Identity,
    Flip,
    Half,
}

impl Intervention {
    pub const ALL: [Intervention; 3] = [
        Intervention::Identity,
        Intervention::Flip,
        Intervention::Half,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intervention::Identity => "identity",
            Intervention::Flip => "flip",
            Intervention::Half => "half",
        }
    }
}

impl fmt::Display for Intervention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Intervention {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Intervention::ALL
            .into_iter()
            .find(|i| i.name() == s)
            .ok_or_else(|| format!("unknown intervention `{s}`"))
    }
}

/// Value of `s` passed to the predictor under `policy`.
pub fn intervene(s_observed: f64, policy: Intervention) -> f64 {
    match policy {
        Intervention::Identity => s_observed,
        Intervention::Flip => 1.0 - s_observed,
        Intervention::Half => 0.5,
    }
}

/// Tape handles of every model parameter, grouped by network.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<Var>,
    pub decoder: Vec<Var>,
    pub predictor: Vec<Var>,
}

impl BoundModel {
    /// All handles in [`Module::parameters`] order.
    pub fn all(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .chain(&self.predictor)
            .copied()
            .collect()
    }
}

/// A batch prepared for the loss: encoded covariates, `s` and optional labels.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub x: &'a Matrix,
    pub s: &'a [bool],
    /// `None` for unlabeled rows.
    pub y: Option<&'a [bool]>,
    /// Standard-normal draw of shape `rows x latent_dim`.
    pub noise: &'a Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunckModel {
    pub architecture: Architecture,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub predictor: DenseLayer,
}

fn column(values: impl Iterator<Item = f64>) -> Matrix {
    let v: Vec<f64> = values.collect();
    let n = v.len();
    Array2::from_shape_vec((n, 1), v).expect("column shape")
}

pub fn bool_column(values: &[bool]) -> Matrix {
    column(values.iter().map(|&b| f64::from(u8::from(b))))
}

impl FunckModel {
    pub fn new<R: Rng + ?Sized>(architecture: Architecture, rng: &mut R) -> Result<Self> {
        if architecture.latent_dim == 0 {
            return Err(ModelError::Dimensions("latent_dim must be positive".into()));
        }
        let encoder = Mlp::new(&architecture.encoder_dims(), rng)?;
        let decoder = Mlp::new(&architecture.decoder_dims(), rng)?;
        let predictor = DenseLayer::he(architecture.predictor_in(), 1, rng);
        Ok(FunckModel {
            architecture,
            encoder,
            decoder,
            predictor,
        })
    }

    /// All parameters set to zero (useful as an analytic reference point).
    pub fn zeros(architecture: Architecture) -> Result<Self> {
        let zero = |dims: Vec<usize>| {
            Mlp::from_layers(
                dims.windows(2)
                    .map(|w| DenseLayer::zeros(w[0], w[1]))
                    .collect(),
            )
        };
        Ok(FunckModel {
            encoder: zero(architecture.encoder_dims())?,
            decoder: zero(architecture.decoder_dims())?,
            predictor: DenseLayer::zeros(architecture.predictor_in(), 1),
            architecture,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.architecture.latent_dim
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        BoundModel {
            encoder: bind(tape, &self.encoder, trainable),
            decoder: bind(tape, &self.decoder, trainable),
            predictor: bind(tape, &self.predictor, trainable),
        }
    }

    /// Posterior mean and clamped log standard deviation.
    pub fn encode(&self, tape: &mut Tape, bound: &BoundModel, x: Var) -> Result<LatentGaussian> {
        if x.cols() != self.architecture.input_dim {
            return Err(ModelError::Dimensions(format!(
                "input has {} columns, encoder expects {}",
                x.cols(),
                self.architecture.input_dim
            )));
        }
        let out = self.encoder.forward(tape, &bound.encoder, x)?;
        let l = self.latent_dim();
        let mu = tape.slice_cols(out, 0, l)?;
        let raw = tape.slice_cols(out, l, l)?;
        let log_sigma = tape.clamp(raw, LOG_SIGMA_CLAMP.0, LOG_SIGMA_CLAMP.1)?;
        Ok(LatentGaussian { mu, log_sigma })
    }

    /// `z = mu + exp(log_sigma) * noise`; `noise` enters as a constant.
    pub fn reparameterize(tape: &mut Tape, latent: &LatentGaussian, noise: &Matrix) -> Result<Var> {
        if noise.dim() != latent.mu.shape() {
            return Err(ModelError::Dimensions(format!(
                "noise shape {:?} does not match latent {:?}",
                noise.dim(),
                latent.mu.shape()
            )));
        }
        let n = tape.constant(noise.clone());
        let sigma = tape.exp(latent.log_sigma)?;
        let spread = tape.mul(sigma, n)?;
        Ok(tape.add(latent.mu, spread)?)
    }

    fn with_s(tape: &mut Tape, z: Var, s: Option<Var>) -> Result<Var> {
        Ok(match s {
            Some(s) => tape.concat_cols(&[z, s])?,
            None => z,
        })
    }

    /// Numeric means followed by one logit block per categorical feature.
    pub fn decode(&self, tape: &mut Tape, bound: &BoundModel, z: Var, s: Var) -> Result<Var> {
        let s = self.architecture.decoder_conditions_on_s.then_some(s);
        let input = Self::with_s(tape, z, s)?;
        Ok(self.decoder.forward(tape, &bound.decoder, input)?)
    }

    /// Logit of `y = 1`. `s` is ignored by an unconditional predictor.
    pub fn predict_logit(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        z: Var,
        s: Var,
    ) -> Result<Var> {
        let s = self.architecture.predictor_conditions_on_s.then_some(s);
        let input = Self::with_s(tape, z, s)?;
        Ok(DenseLayer::forward(tape, &bound.predictor, input)?)
    }

    /// Weighted loss of one (sub)batch with a single posterior sample.
    ///
    /// Terms with zero weight are not evaluated; the classification term is
    /// evaluated only when labels are given.
    pub fn loss(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        inputs: LossInputs<'_>,
        weights: &TermWeights,
        layout: &FeatureLayout,
    ) -> Result<(Var, LossBreakdown)> {
        let rows = inputs.x.nrows();
        let x = tape.constant(inputs.x.clone());
        let s = tape.constant(bool_column(inputs.s));
        let latent = self.encode(tape, bound, x)?;
        let kl_rows = tape.kl_std_normal(latent.mu, latent.log_sigma)?;
        let kl = tape.mean(kl_rows)?;
        let z = Self::reparameterize(tape, &latent, inputs.noise)?;

        let (rec_numeric, rec_categorical) = if weights.rec != 0.0 {
            let decoded = self.decode(tape, bound, z, s)?;
            objectives::reconstruction_terms(tape, decoded, inputs.x, layout)?
        } else {
            (None, None)
        };
        let (cls, weights) = match inputs.y {
            Some(y) if weights.cls != 0.0 => {
                let logit = self.predict_logit(tape, bound, z, s)?;
                (Some(tape.binary_ce(logit, &bool_column(y))?), *weights)
            }
            Some(_) => (None, *weights),
            None => (None, weights.unsupervised()),
        };
        let terms = LossTerms {
            kl,
            rec_numeric,
            rec_categorical,
            cls,
        };
        let (total, mut breakdown) = objectives::funck_loss(tape, &weights, &terms)?;
        if inputs.y.is_some() {
            breakdown.n_supervised = rows;
        } else {
            breakdown.n_unsupervised = rows;
        }
        Ok((total, breakdown))
    }

    /// Posterior means for every row of `x` (the evaluation representation).
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let latent = self.encode(&mut tape, &bound, xv)?;
        Ok(tape.value(latent.mu).clone())
    }

    /// Predicted logits from posterior means, with `s_values` fed to the predictor.
    pub fn predict_logits(&self, x: &Matrix, s_values: &[f64]) -> Result<Vec<f64>> {
        if s_values.len() != x.nrows() {
            return Err(ModelError::Dimensions(format!(
                "{} s values for {} rows",
                s_values.len(),
                x.nrows()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let latent = self.encode(&mut tape, &bound, xv)?;
        let s = tape.constant(column(s_values.iter().copied()));
        let logit = self.predict_logit(&mut tape, &bound, latent.mu, s)?;
        Ok(tape.value(logit).iter().copied().collect())
    }

    /// `P(y = 1 | z = mu(x), s)` for each row.
    pub fn predict_proba(&self, x: &Matrix, s_values: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .predict_logits(x, s_values)?
            .into_iter()
            .map(|l| 1.0 / (1.0 + (-l).exp()))
            .collect())
    }

    /// Thresholded predictions at 0.5 under an intervention on the observed `s`.
    pub fn predict_with(&self, x: &Matrix, s: &[bool], policy: Intervention) -> Result<Vec<bool>> {
        let s_values: Vec<f64> = s
            .iter()
            .map(|&v| intervene(f64::from(u8::from(v)), policy))
            .collect();
        Ok(self
            .predict_logits(x, &s_values)?
            .into_iter()
            .map(|l| l > 0.0)
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.parameters()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }
}

impl Module for FunckModel {
    fn parameters(&self) -> Vec<&Matrix> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        p.extend(self.predictor.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p.extend(self.predictor.parameters_mut());
        p
    }
}
