//! Post-hoc probes on frozen representations and on the predictive posterior.
//!
//! [`evaluate_representation`] fits logistic-regression and random-forest
//! classifiers for `y` and `s` and linear / random-forest regressors for one
//! numeric covariate on 4 of 5 folds of the test representations, scoring
//! on the held-out fold. [`evaluate_posterior`] scores the model's own
//! predictor under the three interventions on `s`.

mod forest;
mod linear;
mod logistic;

pub use forest::{DecisionTree, ForestConfig, MaxFeatures, RandomForest};
pub use linear::LinearProbe;
pub use logistic::{LogisticConfig, LogisticProbe};

use std::collections::HashMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::models::{FunckModel, Intervention, ModelError};
use crate::seed::{self, Stream};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("{0} rows of features but {1} targets")]
    Length(usize, usize),
    #[error("group s = {0} is empty")]
    EmptyGroup(u8),
    #[error("{0}")]
    Empty(&'static str),
    #[error("{0} produced non-finite parameters")]
    NonFinite(&'static str),
    #[error("linear algebra failure: {0}")]
    Linalg(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ProbeError>;

fn check_rows(x: &Matrix, n: usize) -> Result<()> {
    if x.nrows() != n {
        return Err(ProbeError::Length(x.nrows(), n));
    }
    if n == 0 {
        return Err(ProbeError::Empty("no rows to fit"));
    }
    Ok(())
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(ProbeError::Length(a, b))
    }
}

fn group_rates(values: impl Iterator<Item = bool>, s: &[bool]) -> Result<(f64, f64)> {
    let mut count = [0usize; 2];
    let mut hits = [0usize; 2];
    for (v, &g) in values.zip(s) {
        let g = usize::from(g);
        count[g] += 1;
        hits[g] += usize::from(v);
    }
    if let Some(g) = count.iter().position(|&c| c == 0) {
        return Err(ProbeError::EmptyGroup(g as u8));
    }
    Ok((
        hits[0] as f64 / count[0] as f64,
        hits[1] as f64 / count[1] as f64,
    ))
}

/// Statistical-parity gap `|P(f = 1 | s = 0) - P(f = 1 | s = 1)|`.
pub fn discrimination(predictions: &[bool], s: &[bool]) -> Result<f64> {
    check_len(predictions.len(), s.len())?;
    let (a, b) = group_rates(predictions.iter().copied(), s)?;
    Ok((a - b).abs())
}

/// Accuracy-parity gap `|P(f != y | s = 0) - P(f != y | s = 1)|`.
pub fn error_gap(predictions: &[bool], y: &[bool], s: &[bool]) -> Result<f64> {
    check_len(predictions.len(), y.len())?;
    check_len(predictions.len(), s.len())?;
    let errors = predictions.iter().zip(y).map(|(p, t)| p != t);
    let (a, b) = group_rates(errors, s)?;
    Ok((a - b).abs())
}

pub fn accuracy(predictions: &[bool], y: &[bool]) -> f64 {
    let hits = predictions.iter().zip(y).filter(|(p, t)| p == t).count();
    hits as f64 / y.len() as f64
}

pub fn mean_absolute_error(predictions: &[f64], target: &[f64]) -> f64 {
    let total: f64 = predictions
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum();
    total / target.len() as f64
}

/// Accuracy on `test` of always predicting the majority class of `train`.
pub fn majority_accuracy(train: &[bool], test: &[bool]) -> f64 {
    let positives = train.iter().filter(|&&v| v).count();
    let majority = 2 * positives > train.len();
    test.iter().filter(|&&v| v == majority).count() as f64 / test.len() as f64
}

/// Median, averaging the two middle values for even counts. `None` if empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Seeded partition of `0..n` into `k` folds of near-equal size.
pub fn kfold(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Probes, u64::MAX));
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = n / k + usize::from(f < n % k);
        let mut fold = order[start..start + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += size;
    }
    folds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Logistic,
    RandomForest,
    Linear,
    RandomForestRegressor,
    Majority,
    Posterior,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Logistic => "logistic",
            Estimator::RandomForest => "random_forest",
            Estimator::Linear => "linear",
            Estimator::RandomForestRegressor => "random_forest_regressor",
            Estimator::Majority => "majority",
            Estimator::Posterior => "posterior",
        })
    }
}

/// One evaluation outcome. Metrics that do not apply to the target are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model_id: String,
    pub seed: u64,
    /// Held-out fold, or empty for whole-test-set and fold-median rows.
    pub fold: Option<usize>,
    pub estimator: Estimator,
    /// `y`, `s`, or `x:<feature>`.
    pub target: String,
    pub policy: Option<Intervention>,
    pub accuracy: Option<f64>,
    pub discrimination: Option<f64>,
    pub error_gap: Option<f64>,
    pub mae: Option<f64>,
}

impl MetricRecord {
    fn new(ctx: &EvalContext, fold: Option<usize>, estimator: Estimator, target: &str) -> Self {
        MetricRecord {
            model_id: ctx.model_id.clone(),
            seed: ctx.seed,
            fold,
            estimator,
            target: target.to_string(),
            policy: None,
            accuracy: None,
            discrimination: None,
            error_gap: None,
            mae: None,
        }
    }

    fn key(&self) -> (String, u64, Estimator, String, Option<Intervention>) {
        (
            self.model_id.clone(),
            self.seed,
            self.estimator,
            self.target.clone(),
            self.policy,
        )
    }
}

/// Identifies the evaluated model and seeds every probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalContext {
    pub model_id: String,
    pub seed: u64,
}

/// Probe battery settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub folds: usize,
    pub logistic: LogisticConfig,
    pub trees: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            folds: 5,
            logistic: LogisticConfig::default(),
            trees: 100,
        }
    }
}

/// A numeric column to regress from the representation.
#[derive(Debug, Clone, Copy)]
pub struct FidelityTarget<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

fn pick<T: Copy>(values: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| values[i]).collect()
}

fn rows(x: &Matrix, idx: &[usize]) -> Matrix {
    x.select(ndarray::Axis(0), idx)
}

fn classification_record(
    ctx: &EvalContext,
    fold: usize,
    estimator: Estimator,
    target: &str,
    predictions: &[bool],
    truth: &[bool],
    s: Option<&[bool]>,
) -> MetricRecord {
    let mut r = MetricRecord::new(ctx, Some(fold), estimator, target);
    r.accuracy = Some(accuracy(predictions, truth));
    if let Some(s) = s {
        r.discrimination = discrimination(predictions, s).ok();
        r.error_gap = error_gap(predictions, truth, s).ok();
    }
    r
}

fn probe_seed(ctx: &EvalContext, fold: usize, slot: u64) -> u64 {
    seed::derive(ctx.seed, Stream::Probes, fold as u64 * 16 + slot)
}

/// Per-fold probe metrics for `y`, `s` and the fidelity feature.
///
/// Folds whose training part holds a single class of a classification
/// target skip that target.
pub fn evaluate_representation(
    z: &Matrix,
    y: &[bool],
    s: &[bool],
    fidelity: FidelityTarget<'_>,
    ctx: &EvalContext,
    settings: &ProbeSettings,
) -> Result<Vec<MetricRecord>> {
    check_rows(z, y.len())?;
    check_len(y.len(), s.len())?;
    check_len(y.len(), fidelity.values.len())?;
    if settings.folds < 2 || settings.folds > y.len() {
        return Err(ProbeError::Empty(
            "need at least 2 folds and one row per fold",
        ));
    }
    let folds = kfold(y.len(), settings.folds, ctx.seed);
    let x_target = format!("x:{}", fidelity.name);
    let mut records = Vec::new();

    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let (z_train, z_test) = (rows(z, &train), rows(z, test));
        let s_test = pick(s, test);

        for (slot, name, labels) in [(0u64, "y", y), (1, "s", s)] {
            let l_train = pick(labels, &train);
            let l_test = pick(labels, test);
            if l_train.iter().all(|&v| v == l_train[0]) {
                log::warn!(
                    "{}: fold {f} has a single {name} class in training; skipped",
                    ctx.model_id
                );
                continue;
            }
            let group = (name == "y").then_some(s_test.as_slice());
            let lr = LogisticProbe::fit(&z_train, &l_train, &settings.logistic)?;
            if !lr.converged {
                log::debug!(
                    "{}: logistic probe for {name} hit the iteration limit",
                    ctx.model_id
                );
            }
            records.push(classification_record(
                ctx,
                f,
                Estimator::Logistic,
                name,
                &lr.predict(&z_test),
                &l_test,
                group,
            ));
            let config = ForestConfig {
                n_trees: settings.trees,
                ..ForestConfig::classifier(probe_seed(ctx, f, slot))
            };
            let rf = RandomForest::fit_classifier(&z_train, &l_train, &config)?;
            records.push(classification_record(
                ctx,
                f,
                Estimator::RandomForest,
                name,
                &rf.predict_class(&z_test),
                &l_test,
                group,
            ));
        }

        let t_train = pick(fidelity.values, &train);
        let t_test = pick(fidelity.values, test);
        let lin = LinearProbe::fit(&z_train, &t_train)?;
        let mut r = MetricRecord::new(ctx, Some(f), Estimator::Linear, &x_target);
        r.mae = Some(mean_absolute_error(&lin.predict(&z_test), &t_test));
        records.push(r);
        let config = ForestConfig {
            n_trees: settings.trees,
            ..ForestConfig::regressor(probe_seed(ctx, f, 2))
        };
        let rf = RandomForest::fit(&z_train, &t_train, &config)?;
        let mut r = MetricRecord::new(ctx, Some(f), Estimator::RandomForestRegressor, &x_target);
        r.mae = Some(mean_absolute_error(&rf.predict(&z_test), &t_test));
        records.push(r);
    }
    Ok(records)
}

/// The representation battery run on the raw encoded covariates, plus a
/// majority-class baseline for `y` and `s` on every fold.
pub fn baseline_eval(
    x: &Matrix,
    y: &[bool],
    s: &[bool],
    fidelity: FidelityTarget<'_>,
    ctx: &EvalContext,
    settings: &ProbeSettings,
) -> Result<Vec<MetricRecord>> {
    let mut records = evaluate_representation(x, y, s, fidelity, ctx, settings)?;
    let folds = kfold(y.len(), settings.folds, ctx.seed);
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..y.len())
            .filter(|i| test.binary_search(i).is_err())
            .collect();
        for (name, labels) in [("y", y), ("s", s)] {
            let l_train = pick(labels, &train);
            let l_test = pick(labels, test);
            let majority = 2 * l_train.iter().filter(|&&v| v).count() > l_train.len();
            let preds = vec![majority; test.len()];
            let group = (name == "y").then(|| pick(s, test));
            let mut r = classification_record(
                ctx,
                f,
                Estimator::Majority,
                name,
                &preds,
                &l_test,
                group.as_deref(),
            );
            r.accuracy = Some(majority_accuracy(&l_train, &l_test));
            records.push(r);
        }
    }
    Ok(records)
}

/// Accuracy, discrimination and error gap of the model's thresholded
/// predictive posterior under each intervention, on the whole test set.
pub fn evaluate_posterior(
    model: &FunckModel,
    x: &Matrix,
    y: &[bool],
    s: &[bool],
    ctx: &EvalContext,
) -> Result<Vec<MetricRecord>> {
    check_rows(x, y.len())?;
    check_len(y.len(), s.len())?;
    Intervention::ALL
        .into_iter()
        .map(|policy| {
            let predictions = model.predict_with(x, s, policy)?;
            let mut r = MetricRecord::new(ctx, None, Estimator::Posterior, "y");
            r.policy = Some(policy);
            r.accuracy = Some(accuracy(&predictions, y));
            r.discrimination = Some(discrimination(&predictions, s)?);
            r.error_gap = Some(error_gap(&predictions, y, s)?);
            Ok(r)
        })
        .collect()
}

/// Collapses per-fold records to one record per (model, seed, estimator,
/// target, policy) holding the median of each metric over folds.
pub fn fold_median(records: &[MetricRecord]) -> Vec<MetricRecord> {
    let mut order = Vec::new();
    let mut groups: HashMap<_, Vec<&MetricRecord>> = HashMap::new();
    for r in records {
        let key = r.key();
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &groups[&key];
            let collect = |f: fn(&MetricRecord) -> Option<f64>| -> Option<f64> {
                let values: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
                median(&values)
            };
            MetricRecord {
                fold: None,
                accuracy: collect(|r| r.accuracy),
                discrimination: collect(|r| r.discrimination),
                error_gap: collect(|r| r.error_gap),
                mae: collect(|r| r.mae),
                ..group[0].clone()
            }
        })
        .collect()
}

/// The fold-median value of `metric` for `estimator` on `target`, if present.
pub fn median_metric(
    records: &[MetricRecord],
    estimator: Estimator,
    target: &str,
    metric: fn(&MetricRecord) -> Option<f64>,
) -> Option<f64> {
    let values: Vec<f64> = records
        .iter()
        .filter(|r| r.estimator == estimator && r.target == target && r.fold.is_some())
        .filter_map(metric)
        .collect();
    median(&values)
}
