//! The FUNCK family of variational objectives.
//!
//! Every variant reduces to three weights on the per-batch terms
//! `KL(q(z|x) || N(0, I))`, the reconstruction NLL of `x` given `(z, s)` and
//! the classification NLL of `y` given `(z, s)`:
//!
//! | variant | (kl, rec, cls) |
//! |---------|----------------|
//! | CPFSI(γ, β) | (1, γ + 1, β) |
//! | FUNCK(δ, γ, β) | (1, δ + γ, β) |
//! | CPF(γ) | (1, γ + 1, 0) |
//! | CFB(β) | (1, 0, 1 + β) |
//! | IBSI(α, β) | (1, α, β), α in [0, 1) |

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Matrix, Tape, Var};
use crate::data::FeatureLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("objective.{field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error("loss term `{term}` is not finite ({value})")]
    NonFiniteTerm { term: &'static str, value: f64 },
    #[error("both the supervised and the unsupervised subsets are empty")]
    EmptyBatch,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

pub type Result<T> = std::result::Result<T, ObjectiveError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Cpfsi,
    Cpf,
    Cfb,
    Ibsi,
    Funck,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Cpfsi,
        Variant::Cpf,
        Variant::Cfb,
        Variant::Ibsi,
        Variant::Funck,
    ];
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cpfsi => "CPFSI",
            Variant::Cpf => "CPF",
            Variant::Cfb => "CFB",
            Variant::Ibsi => "IBSI",
            Variant::Funck => "FUNCK",
        })
    }
}

/// A variant with its multipliers as written in an experiment config.
///
/// Unset multipliers take the variant's default. `alpha` may be given instead
/// of `gamma` for the funnel variants, where it means the reconstruction
/// weight (`gamma + 1` for CPFSI/CPF, `delta + gamma` for FUNCK).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictor_conditions_on_s: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_conditions_on_s: Option<bool>,
}

/// Loss-term weights plus the conditioning flags of the decoder and predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermWeights {
    pub kl: f64,
    pub rec: f64,
    pub cls: f64,
    pub predictor_conditions_on_s: bool,
    pub decoder_conditions_on_s: bool,
}

impl TermWeights {
    /// Same weights with the classification term switched off (unlabeled rows).
    pub fn unsupervised(self) -> Self {
        TermWeights { cls: 0.0, ..self }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ObjectiveError {
    ObjectiveError::InvalidSpec {
        field,
        reason: reason.into(),
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(invalid(
            field,
            format!("must be a finite non-negative number, got {value}"),
        ))
    }
}

fn unset_or(field: &'static str, value: Option<f64>, required: f64, why: &str) -> Result<()> {
    match value {
        Some(v) if v != required => Err(invalid(
            field,
            format!("must be {required} ({why}), got {v}"),
        )),
        _ => Ok(()),
    }
}

impl ObjectiveSpec {
    fn bare(variant: Variant) -> Self {
        ObjectiveSpec {
            variant,
            delta: None,
            gamma: None,
            alpha: None,
            beta: None,
            predictor_conditions_on_s: None,
            decoder_conditions_on_s: None,
        }
    }

    pub fn cpfsi(gamma: f64, beta: f64) -> Self {
        ObjectiveSpec {
            gamma: Some(gamma),
            beta: Some(beta),
            ..Self::bare(Variant::Cpfsi)
        }
    }

    pub fn cpf(gamma: f64) -> Self {
        ObjectiveSpec {
            gamma: Some(gamma),
            ..Self::bare(Variant::Cpf)
        }
    }

    pub fn cfb(beta: f64) -> Self {
        ObjectiveSpec {
            beta: Some(beta),
            ..Self::bare(Variant::Cfb)
        }
    }

    pub fn ibsi(alpha: f64, beta: f64) -> Self {
        ObjectiveSpec {
            alpha: Some(alpha),
            beta: Some(beta),
            ..Self::bare(Variant::Ibsi)
        }
    }

    pub fn funck(delta: f64, gamma: f64, beta: f64) -> Self {
        ObjectiveSpec {
            delta: Some(delta),
            gamma: Some(gamma),
            beta: Some(beta),
            ..Self::bare(Variant::Funck)
        }
    }

    /// Grid-point constructor used by sweeps.
    ///
    /// `alpha` is the reconstruction weight for CPFSI, CPF and FUNCK (δ = 1),
    /// ignored for CFB, and passed through [`ibsi_legacy_map`] for IBSI so
    /// that any non-negative grid value lands in `[0, 1)`. `beta` is dropped
    /// for CPF.
    pub fn from_grid(variant: Variant, alpha: f64, beta: f64) -> Self {
        match variant {
            Variant::Cpfsi => ObjectiveSpec {
                alpha: Some(alpha),
                beta: Some(beta),
                ..Self::bare(variant)
            },
            Variant::Cpf => ObjectiveSpec {
                alpha: Some(alpha),
                ..Self::bare(variant)
            },
            Variant::Cfb => Self::cfb(beta),
            Variant::Ibsi => Self::ibsi(ibsi_legacy_map(alpha, 0.0).0, beta),
            Variant::Funck => ObjectiveSpec {
                delta: Some(1.0),
                alpha: Some(alpha),
                beta: Some(beta),
                ..Self::bare(variant)
            },
        }
    }

    pub fn with_flags(
        mut self,
        predictor_conditions_on_s: bool,
        decoder_conditions_on_s: bool,
    ) -> Self {
        self.predictor_conditions_on_s = Some(predictor_conditions_on_s);
        self.decoder_conditions_on_s = Some(decoder_conditions_on_s);
        self
    }

    /// Resolves the spec into weights, checking the variant's constraints.
    pub fn validate(&self) -> Result<TermWeights> {
        resolve_weights(self)
    }

    /// Reconstruction multiplier after resolution (`α` in the grid sense).
    pub fn alpha(&self) -> Result<f64> {
        Ok(resolve_weights(self)?.rec)
    }

    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(0.0)
    }
}

/// `gamma` from either `gamma` or `alpha = gamma + offset`, whichever is set.
fn funnel_gamma(spec: &ObjectiveSpec, offset: f64) -> Result<f64> {
    match (spec.gamma, spec.alpha) {
        (Some(g), None) => non_negative("gamma", g),
        (None, Some(a)) => {
            let a = non_negative("alpha", a)?;
            if a < offset {
                return Err(invalid(
                    "alpha",
                    format!("must be at least {offset}, got {a}"),
                ));
            }
            Ok(a - offset)
        }
        (Some(g), Some(a)) => {
            let g = non_negative("gamma", g)?;
            if g + offset != a {
                return Err(invalid(
                    "alpha",
                    format!("must equal gamma + {offset} = {}, got {a}", g + offset),
                ));
            }
            Ok(g)
        }
        (None, None) => Ok(0.0),
    }
}

/// Maps a spec to `(w_kl, w_rec, w_cls)` and conditioning flags.
pub fn resolve_weights(spec: &ObjectiveSpec) -> Result<TermWeights> {
    let beta = non_negative("beta", spec.beta.unwrap_or(0.0))?;
    let predictor_default = spec.variant != Variant::Ibsi;
    let predictor = spec.predictor_conditions_on_s.unwrap_or(predictor_default);
    let decoder = spec.decoder_conditions_on_s.unwrap_or(true);

    let (rec, cls) = match spec.variant {
        Variant::Cpfsi => {
            unset_or("delta", spec.delta, 1.0, "CPFSI fixes delta")?;
            (funnel_gamma(spec, 1.0)? + 1.0, beta)
        }
        Variant::Cpf => {
            unset_or("delta", spec.delta, 1.0, "CPF fixes delta")?;
            unset_or("beta", spec.beta, 0.0, "CPF has no classification term")?;
            (funnel_gamma(spec, 1.0)? + 1.0, 0.0)
        }
        Variant::Funck => {
            let delta = non_negative("delta", spec.delta.unwrap_or(1.0))?;
            (funnel_gamma(spec, delta)? + delta, beta)
        }
        Variant::Cfb => {
            unset_or("alpha", spec.alpha, 0.0, "CFB has no reconstruction term")?;
            if spec.gamma.is_some() || spec.delta.is_some() {
                return Err(invalid("gamma", "CFB takes only beta"));
            }
            (0.0, 1.0 + beta)
        }
        Variant::Ibsi => {
            if spec.gamma.is_some() || spec.delta.is_some() {
                return Err(invalid(
                    "gamma",
                    "IBSI takes alpha and beta; see ibsi_legacy_map",
                ));
            }
            let alpha = non_negative("alpha", spec.alpha.unwrap_or(0.0))?;
            if alpha >= 1.0 {
                return Err(invalid(
                    "alpha",
                    format!("IBSI requires alpha in [0, 1), got {alpha}"),
                ));
            }
            if predictor {
                return Err(invalid(
                    "predictor_conditions_on_s",
                    "IBSI's predictor is unconditional on s",
                ));
            }
            (alpha, beta)
        }
    };
    Ok(TermWeights {
        kl: 1.0,
        rec,
        cls,
        predictor_conditions_on_s: predictor,
        decoder_conditions_on_s: decoder,
    })
}

/// `(gamma_raw, lambda_raw) -> (gamma / (1 + gamma), lambda / (1 + gamma))`.
pub fn ibsi_legacy_map(gamma_raw: f64, lambda_raw: f64) -> (f64, f64) {
    (
        gamma_raw / (1.0 + gamma_raw),
        lambda_raw / (1.0 + gamma_raw),
    )
}

/// Scalar loss terms recorded on a tape, each a batch mean.
///
/// Terms whose weight is zero may be left out.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub kl: Var,
    pub rec_numeric: Option<Var>,
    pub rec_categorical: Option<Var>,
    pub cls: Option<Var>,
}

/// Values of every term and the weighted total for one (sub)batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kl: f64,
    pub rec_numeric: f64,
    pub rec_categorical: f64,
    pub cls: f64,
    pub total: f64,
    pub n_supervised: usize,
    pub n_unsupervised: usize,
}

fn finite(term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ObjectiveError::NonFiniteTerm { term, value })
    }
}

/// `w_kl * kl + w_rec * (rec_numeric + rec_categorical) + w_cls * cls`.
///
/// Returns the total as a tape scalar together with the term values. Batch
/// sizes in the breakdown are left at zero for the caller to fill.
pub fn funck_loss(
    tape: &mut Tape,
    weights: &TermWeights,
    terms: &LossTerms,
) -> Result<(Var, LossBreakdown)> {
    let mut breakdown = LossBreakdown {
        kl: finite("kl", tape.scalar(terms.kl))?,
        ..LossBreakdown::default()
    };
    let mut total = tape.scale(terms.kl, weights.kl)?;

    if weights.rec != 0.0 {
        let mut rec = None;
        if let Some(v) = terms.rec_numeric {
            breakdown.rec_numeric = finite("rec_numeric", tape.scalar(v))?;
            rec = Some(v);
        }
        if let Some(v) = terms.rec_categorical {
            breakdown.rec_categorical = finite("rec_categorical", tape.scalar(v))?;
            rec = Some(match rec {
                Some(r) => tape.add(r, v)?,
                None => v,
            });
        }
        let rec = rec.ok_or_else(|| {
            invalid(
                "alpha",
                "reconstruction weight set but no reconstruction term",
            )
        })?;
        let weighted = tape.scale(rec, weights.rec)?;
        total = tape.add(total, weighted)?;
    }
    if weights.cls != 0.0 {
        let cls = terms.cls.ok_or_else(|| {
            invalid(
                "beta",
                "classification weight set but no classification term",
            )
        })?;
        breakdown.cls = finite("cls", tape.scalar(cls))?;
        let weighted = tape.scale(cls, weights.cls)?;
        total = tape.add(total, weighted)?;
    }
    breakdown.total = finite("total", tape.scalar(total))?;
    Ok((total, breakdown))
}

/// Mean Gaussian NLL of the numeric block and summed per-block categorical
/// cross-entropies between the decoder output and the encoded batch `x`.
///
/// `decoded` has the layout of `x`: numeric means first, then one logit
/// block per categorical feature. Returns `(numeric, categorical)`, each
/// `None` when the layout has no features of that kind.
pub fn reconstruction_terms(
    tape: &mut Tape,
    decoded: Var,
    x: &Matrix,
    layout: &FeatureLayout,
) -> Result<(Option<Var>, Option<Var>)> {
    let n_numeric = layout.n_numeric();
    let numeric = if n_numeric > 0 {
        let target = tape.constant(x.slice(ndarray::s![.., ..n_numeric]).to_owned());
        let mean = tape.slice_cols(decoded, 0, n_numeric)?;
        Some(tape.gaussian_nll(target, mean, &layout.numeric_variances())?)
    } else {
        None
    };
    let mut categorical: Option<Var> = None;
    for block in &layout.categorical {
        let logits = tape.slice_cols(decoded, block.start, block.width)?;
        let onehot = x
            .slice(ndarray::s![.., block.start..block.start + block.width])
            .to_owned();
        let ce = tape.categorical_ce(logits, &onehot)?;
        categorical = Some(match categorical {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
    }
    Ok((numeric, categorical))
}

/// Multiplier applied to the supervised loss: `max(|B_u| / |B_s|, 1)`.
///
/// Zero when there are no labeled rows.
pub fn supervised_scale(n_supervised: usize, n_unsupervised: usize) -> Result<f64> {
    match (n_supervised, n_unsupervised) {
        (0, 0) => Err(ObjectiveError::EmptyBatch),
        (0, _) => Ok(0.0),
        (s, u) => Ok((u as f64 / s as f64).max(1.0)),
    }
}

/// `unsup.total + max(|B_u| / |B_s|, 1) * sup.total`, with either side
/// allowed to be absent.
pub fn semi_supervised_combine(
    sup: Option<&LossBreakdown>,
    unsup: Option<&LossBreakdown>,
) -> Result<f64> {
    let n_s = sup.map_or(0, |b| b.n_supervised);
    let n_u = unsup.map_or(0, |b| b.n_unsupervised);
    let scale = supervised_scale(n_s, n_u)?;
    let u = if n_u > 0 {
        unsup.map_or(0.0, |b| b.total)
    } else {
        0.0
    };
    let s = if n_s > 0 {
        sup.map_or(0.0, |b| b.total)
    } else {
        0.0
    };
    Ok(u + scale * s)
}

/// Tape version of [`semi_supervised_combine`].
pub fn combine_on_tape(
    tape: &mut Tape,
    sup: Option<(Var, usize)>,
    unsup: Option<(Var, usize)>,
) -> Result<Var> {
    let sup = sup.filter(|&(_, n)| n > 0);
    let unsup = unsup.filter(|&(_, n)| n > 0);
    let scale = supervised_scale(sup.map_or(0, |(_, n)| n), unsup.map_or(0, |(_, n)| n))?;
    Ok(match (sup, unsup) {
        (Some((s, _)), None) => s,
        (None, Some((u, _))) => u,
        (Some((s, _)), Some((u, _))) => {
            let s = if scale == 1.0 {
                s
            } else {
                tape.scale(s, scale)?
            };
            tape.add(u, s)?
        }
        (None, None) => unreachable!("supervised_scale rejects empty batches"),
    })
}
