use ndarray::Axis;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::pipeline::PreparedData;
use super::{Result, RunnerError};
use crate::autodiff::{AutodiffError, Matrix, Tape};
use crate::data::make_batches;
use crate::models::{Architecture, FunckModel, LossInputs, ModelError};
use crate::nn::{Adam, Module, NnError, PlateauScheduler};
use crate::objectives::{combine_on_tape, ObjectiveError, TermWeights};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the per-batch training objectives.
    pub train_loss: f64,
    pub validation_loss: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: FunckModel,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub epochs_run: usize,
    pub steps: u64,
    pub trace: Vec<EpochLog>,
}

fn noise<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn non_finite_autodiff(e: &AutodiffError) -> bool {
    matches!(e, AutodiffError::NonFinite { .. })
}

/// Whether a model error comes from a value blowing up rather than a bug or bad input.
fn is_non_finite(e: &ModelError) -> bool {
    match e {
        ModelError::Autodiff(a) | ModelError::Nn(NnError::Autodiff(a)) => non_finite_autodiff(a),
        ModelError::Nn(NnError::NonFiniteGradient { .. }) => true,
        ModelError::Objective(ObjectiveError::NonFiniteTerm { .. }) => true,
        ModelError::Objective(ObjectiveError::Autodiff(a)) => non_finite_autodiff(a),
        _ => false,
    }
}

fn diverged(epoch: usize) -> impl Fn(ModelError) -> RunnerError {
    move |e| {
        if is_non_finite(&e) {
            RunnerError::Diverged {
                epoch,
                detail: e.to_string(),
            }
        } else {
            e.into()
        }
    }
}

/// Objective on a set of rows, without gradient. All labels are used.
fn evaluation_loss(
    model: &FunckModel,
    data: &PreparedData,
    rows: &[usize],
    eps: &Matrix,
    weights: &TermWeights,
) -> std::result::Result<f64, ModelError> {
    let ds = &data.encoded;
    let x = ds.x.select(Axis(0), rows);
    let s: Vec<bool> = rows.iter().map(|&i| ds.s[i]).collect();
    let y: Vec<bool> = rows.iter().map(|&i| ds.y[i]).collect();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let inputs = LossInputs {
        x: &x,
        s: &s,
        y: Some(&y),
        noise: eps,
    };
    let (_, breakdown) = model.loss(&mut tape, &bound, inputs, weights, &ds.layout)?;
    Ok(breakdown.total)
}

/// Trains with Adam on mini-batches, tracks the validation objective each
/// epoch and keeps the parameters of the best epoch.
pub fn train_model(
    config: &RunConfig,
    weights: &TermWeights,
    data: &PreparedData,
    seed: u64,
) -> Result<TrainOutcome> {
    let ds = &data.encoded;
    let latent = config.model.latent_dim;
    let arch = Architecture::new(
        ds.n_features(),
        latent,
        config.model.hidden.clone(),
        weights,
    );
    let mut model = FunckModel::new(arch, &mut seed::rng(seed, Stream::Init, 0))?;
    let shapes: Vec<(usize, usize)> = model.parameters().iter().map(|p| p.dim()).collect();
    let training = &config.training;
    let mut adam = Adam::new(training.adam(), &shapes);
    let mut scheduler = PlateauScheduler::new(training.scheduler, training.learning_rate);

    let val_rows = &data.split.validation;
    let val_noise = noise(
        &mut seed::rng(seed, Stream::Validation, 0),
        val_rows.len(),
        latent,
    );

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_loss = f64::INFINITY;
    let mut trace = Vec::new();
    let mut epochs_run = 0;

    for epoch in 1..=training.max_epochs {
        let batches = make_batches(
            &data.split.train,
            &ds.label_mask,
            training.batch_size,
            seed,
            epoch as u64,
        );
        let mut rng = seed::rng(seed, Stream::Noise, epoch as u64);
        let mut epoch_total = 0.0;
        for batch in &batches {
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, true);
            let mut part = |rows: &[usize], labeled: bool, tape: &mut Tape| -> Result<Option<_>> {
                if rows.is_empty() {
                    return Ok(None);
                }
                let x = ds.x.select(Axis(0), rows);
                let s: Vec<bool> = rows.iter().map(|&i| ds.s[i]).collect();
                let y: Vec<bool> = rows.iter().map(|&i| ds.y[i]).collect();
                let eps = noise(&mut rng, rows.len(), latent);
                let inputs = LossInputs {
                    x: &x,
                    s: &s,
                    y: labeled.then_some(y.as_slice()),
                    noise: &eps,
                };
                let (total, _) = model
                    .loss(tape, &bound, inputs, weights, &ds.layout)
                    .map_err(diverged(epoch))?;
                Ok(Some((total, rows.len())))
            };
            let sup = part(&batch.supervised, true, &mut tape)?;
            let unsup = part(&batch.unsupervised, false, &mut tape)?;
            let total =
                combine_on_tape(&mut tape, sup, unsup).map_err(|e| diverged(epoch)(e.into()))?;
            let value = tape.scalar(total);
            if !value.is_finite() {
                return Err(RunnerError::Diverged {
                    epoch,
                    detail: format!("batch loss {value}"),
                });
            }
            epoch_total += value;
            let grads = tape
                .backward(total)
                .map_err(|e| diverged(epoch)(e.into()))?;
            let grads: Vec<Matrix> = bound.all().into_iter().map(|v| grads.wrt(v)).collect();
            adam.step(model.parameters_mut(), &grads)
                .map_err(|e| diverged(epoch)(e.into()))?;
        }

        let validation_loss = evaluation_loss(&model, data, val_rows, &val_noise, weights)
            .map_err(diverged(epoch))?;
        let lr_used = adam.learning_rate();
        let step = scheduler.step(validation_loss);
        adam.set_learning_rate(step.learning_rate);
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best_epoch = epoch;
            best.clone_from(&model);
        }
        trace.push(EpochLog {
            epoch,
            train_loss: epoch_total / batches.len().max(1) as f64,
            validation_loss,
            learning_rate: lr_used,
        });
        epochs_run = epoch;
        log::debug!(
            "epoch {epoch}: train {:.5} val {validation_loss:.5}",
            trace[epoch - 1].train_loss
        );
        if step.should_stop {
            break;
        }
    }

    Ok(TrainOutcome {
        model: best,
        best_epoch,
        best_validation_loss: best_loss,
        epochs_run,
        steps: adam.steps(),
        trace,
    })
}
