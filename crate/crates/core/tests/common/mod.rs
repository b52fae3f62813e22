#![allow(dead_code)]

use std::path::Path;

use funck::autodiff::{Matrix, Tape, Var};
use funck::data::{CategoricalBlock, FeatureLayout, NumericFeature};
use funck::models::{Architecture, BoundModel, FunckModel, LossInputs};
use funck::nn::Module;
use funck::objectives::{combine_on_tape, resolve_weights, ObjectiveSpec, TermWeights};
use funck::runner::{ExperimentConfig, RunConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_DRAWS: usize = 20;

pub type Scalar = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

/// Inputs and a scalar function of them.
pub struct Case {
    pub inputs: Vec<Matrix>,
    pub f: Scalar,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

pub fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Values with magnitude in [0.1, 2), away from the ReLU kink.
fn off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_simple_fn((rows, cols), || {
        let m = rng.random_range(0.1..2.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn value_of(f: &Scalar, inputs: &[Matrix]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.parameter(m.clone())).collect();
    let out = f(&mut tape, &vars);
    tape.scalar(out)
}

/// Largest relative error `|g - n| / max(|g|, |n|)` over input tensors,
/// comparing the tape gradient `g` with central differences `n` (vector norms).
pub fn gradient_error(case: &Case) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .map(|m| tape.parameter(m.clone()))
        .collect();
    let out = (case.f)(&mut tape, &vars);
    let grads = tape.backward(out).expect("backward");
    let mut worst = 0.0f64;
    for (i, input) in case.inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[i]);
        let mut numeric = Matrix::zeros(input.dim());
        for idx in ndarray::indices(input.dim()) {
            let mut plus = case.inputs.clone();
            plus[i][idx] += GRADCHECK_STEP;
            let mut minus = case.inputs.clone();
            minus[i][idx] -= GRADCHECK_STEP;
            numeric[idx] =
                (value_of(&case.f, &plus) - value_of(&case.f, &minus)) / (2.0 * GRADCHECK_STEP);
        }
        let diff = (&analytic - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = analytic
            .mapv(|v| v * v)
            .sum()
            .sqrt()
            .max(numeric.mapv(|v| v * v).sum().sqrt());
        if scale > 1e-10 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// `sum(out * w)` for a fixed random `w`, so every output entry is exercised.
fn project(
    rng: &mut ChaCha8Rng,
    make: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
    shape: (usize, usize),
) -> Scalar {
    let w = uniform(rng, shape.0, shape.1, -1.0, 1.0);
    Box::new(move |tape, v| {
        let out = make(tape, v);
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).unwrap();
        tape.sum(prod).unwrap()
    })
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(1..5))
}

type CaseBuilder = fn(&mut ChaCha8Rng) -> Case;

fn unary(rng: &mut ChaCha8Rng, input: Matrix, op: fn(&mut Tape, Var) -> Var) -> Case {
    let shape = input.dim();
    Case {
        inputs: vec![input],
        f: project(rng, move |t, v| op(t, v[0]), shape),
    }
}

/// Every tape primitive, each as a random instance generator.
pub fn primitive_cases() -> Vec<(&'static str, CaseBuilder)> {
    vec![
        ("matmul", |rng| {
            let (r, k) = dims(rng);
            let c = rng.random_range(1..5);
            let inputs = vec![normal(rng, r, k), normal(rng, k, c)];
            Case {
                inputs,
                f: project(rng, |t, v| t.matmul(v[0], v[1]).unwrap(), (r, c)),
            }
        }),
        ("add", |rng| {
            let (r, c) = dims(rng);
            let inputs = vec![normal(rng, r, c), normal(rng, r, c)];
            Case {
                inputs,
                f: project(rng, |t, v| t.add(v[0], v[1]).unwrap(), (r, c)),
            }
        }),
        ("add_row_broadcast", |rng| {
            let (r, c) = dims(rng);
            let inputs = vec![normal(rng, r, c), normal(rng, 1, c)];
            Case {
                inputs,
                f: project(rng, |t, v| t.add(v[0], v[1]).unwrap(), (r, c)),
            }
        }),
        ("mul", |rng| {
            let (r, c) = dims(rng);
            let inputs = vec![normal(rng, r, c), normal(rng, r, c)];
            Case {
                inputs,
                f: project(rng, |t, v| t.mul(v[0], v[1]).unwrap(), (r, c)),
            }
        }),
        ("scale", |rng| {
            let (r, c) = dims(rng);
            let k: f64 = rng.random_range(-3.0..3.0);
            let inputs = vec![normal(rng, r, c)];
            Case {
                inputs,
                f: project(rng, move |t, v| t.scale(v[0], k).unwrap(), (r, c)),
            }
        }),
        ("neg", |rng| {
            let (r, c) = dims(rng);
            let x = normal(rng, r, c);
            unary(rng, x, |t, v| t.neg(v).unwrap())
        }),
        ("relu", |rng| {
            let (r, c) = dims(rng);
            let x = off_zero(rng, r, c);
            unary(rng, x, |t, v| t.relu(v).unwrap())
        }),
        ("exp", |rng| {
            let (r, c) = dims(rng);
            let x = uniform(rng, r, c, -2.0, 2.0);
            unary(rng, x, |t, v| t.exp(v).unwrap())
        }),
        ("log", |rng| {
            let (r, c) = dims(rng);
            let x = uniform(rng, r, c, 0.5, 3.0);
            unary(rng, x, |t, v| t.log(v).unwrap())
        }),
        ("sigmoid", |rng| {
            let (r, c) = dims(rng);
            let x = uniform(rng, r, c, -4.0, 4.0);
            unary(rng, x, |t, v| t.sigmoid(v).unwrap())
        }),
        ("row_softmax", |rng| {
            let (r, c) = dims(rng);
            let x = normal(rng, r, c + 1);
            unary(rng, x, |t, v| t.row_softmax(v).unwrap())
        }),
        ("concat_cols", |rng| {
            let (r, c) = dims(rng);
            let c2 = rng.random_range(1..4);
            let inputs = vec![normal(rng, r, c), normal(rng, r, c2)];
            Case {
                inputs,
                f: project(
                    rng,
                    |t, v| t.concat_cols(&[v[0], v[1]]).unwrap(),
                    (r, c + c2),
                ),
            }
        }),
        ("slice_cols", |rng| {
            let r = rng.random_range(1..5);
            let c = rng.random_range(2..6);
            let start = rng.random_range(0..c - 1);
            let len = rng.random_range(1..c - start + 1);
            let inputs = vec![normal(rng, r, c)];
            Case {
                inputs,
                f: project(
                    rng,
                    move |t, v| t.slice_cols(v[0], start, len).unwrap(),
                    (r, len),
                ),
            }
        }),
        ("clamp", |rng| {
            let (r, c) = dims(rng);
            let x = Array2::from_shape_simple_fn((r, c), || loop {
                let v: f64 = rng.random_range(-2.0..2.0);
                if (v.abs() - 1.0).abs() > 0.05 {
                    break v;
                }
            });
            unary(rng, x, |t, v| t.clamp(v, -1.0, 1.0).unwrap())
        }),
        ("sum", |rng| {
            let (r, c) = dims(rng);
            Case {
                inputs: vec![normal(rng, r, c)],
                f: Box::new(|t, v| t.sum(v[0]).unwrap()),
            }
        }),
        ("mean", |rng| {
            let (r, c) = dims(rng);
            Case {
                inputs: vec![normal(rng, r, c)],
                f: Box::new(|t, v| t.mean(v[0]).unwrap()),
            }
        }),
        ("kl_std_normal", |rng| {
            let (r, c) = dims(rng);
            let inputs = vec![normal(rng, r, c), uniform(rng, r, c, -1.5, 1.5)];
            Case {
                inputs,
                f: project(rng, |t, v| t.kl_std_normal(v[0], v[1]).unwrap(), (r, 1)),
            }
        }),
        ("gaussian_nll", |rng| {
            let (r, c) = dims(rng);
            let variances: Vec<f64> = (0..c).map(|_| rng.random_range(0.3..2.0)).collect();
            let inputs = vec![normal(rng, r, c), normal(rng, r, c)];
            Case {
                inputs,
                f: Box::new(move |t, v| t.gaussian_nll(v[0], v[1], &variances).unwrap()),
            }
        }),
        ("categorical_ce", |rng| {
            let r = rng.random_range(1..6);
            let c = rng.random_range(2..5);
            let mut onehot = Matrix::zeros((r, c));
            for i in 0..r {
                onehot[[i, rng.random_range(0..c)]] = 1.0;
            }
            let inputs = vec![normal(rng, r, c)];
            Case {
                inputs,
                f: Box::new(move |t, v| t.categorical_ce(v[0], &onehot).unwrap()),
            }
        }),
        ("binary_ce", |rng| {
            let r = rng.random_range(1..6);
            let labels =
                Array2::from_shape_simple_fn((r, 1), || f64::from(u8::from(rng.random_bool(0.5))));
            let inputs = vec![uniform(rng, r, 1, -4.0, 4.0)];
            Case {
                inputs,
                f: Box::new(move |t, v| t.binary_ce(v[0], &labels).unwrap()),
            }
        }),
    ]
}

/// Two numeric columns followed by a three-way one-hot block.
pub fn mixed_layout() -> FeatureLayout {
    FeatureLayout {
        numeric: vec![
            NumericFeature {
                name: "a".into(),
                column: 0,
                variance: 1.0,
            },
            NumericFeature {
                name: "b".into(),
                column: 1,
                variance: 0.7,
            },
        ],
        categorical: vec![CategoricalBlock {
            name: "c".into(),
            start: 2,
            width: 3,
        }],
        fidelity: 0,
    }
}

/// A batch matching [`mixed_layout`].
pub struct MixedBatch {
    pub x: Matrix,
    pub s: Vec<bool>,
    pub y: Vec<bool>,
    pub noise: Matrix,
}

pub fn mixed_batch(rng: &mut ChaCha8Rng, rows: usize, latent: usize) -> MixedBatch {
    let mut x = Matrix::zeros((rows, 5));
    for i in 0..rows {
        x[[i, 0]] = rng.sample(StandardNormal);
        x[[i, 1]] = rng.sample(StandardNormal);
        x[[i, 2 + rng.random_range(0..3)]] = 1.0;
    }
    MixedBatch {
        x,
        s: (0..rows).map(|_| rng.random_bool(0.5)).collect(),
        y: (0..rows).map(|_| rng.random_bool(0.5)).collect(),
        noise: normal(rng, rows, latent),
    }
}

pub fn small_model(spec: &ObjectiveSpec, seed: u64) -> (FunckModel, TermWeights) {
    let weights = resolve_weights(spec).unwrap();
    let arch = Architecture::new(5, 2, vec![4, 3], &weights);
    (FunckModel::new(arch, &mut rng(seed)).unwrap(), weights)
}

/// Splits tape handles bound in [`Module::parameters`] order back into networks.
pub fn regroup(model: &FunckModel, vars: &[Var]) -> BoundModel {
    let e = model.encoder.num_tensors();
    let d = model.decoder.num_tensors();
    BoundModel {
        encoder: vars[..e].to_vec(),
        decoder: vars[e..e + d].to_vec(),
        predictor: vars[e + d..].to_vec(),
    }
}

/// The full training objective of `spec` as a function of every model parameter.
///
/// With `labeled_rows < rows` the batch is split into a supervised and an
/// unsupervised part and combined as in training.
pub fn model_loss_case(spec: &ObjectiveSpec, seed: u64, rows: usize, labeled_rows: usize) -> Case {
    let (model, weights) = small_model(spec, seed);
    let mut r = rng(seed ^ 0x5eed);
    let batch = mixed_batch(&mut r, rows, model.latent_dim());
    let layout = mixed_layout();
    // Fresh layers have zero biases, which can put a ReLU exactly on its kink
    // for rows whose previous layer is inactive; jitter to a generic point.
    let inputs: Vec<Matrix> = model
        .parameters()
        .into_iter()
        .map(|p| p + &(normal(&mut r, p.nrows(), p.ncols()) * 0.1))
        .collect();
    Case {
        inputs,
        f: Box::new(move |tape, vars| {
            let bound = regroup(&model, vars);
            let part = |tape: &mut Tape, lo: usize, hi: usize, labeled: bool| {
                if lo == hi {
                    return None;
                }
                let x = batch.x.slice(ndarray::s![lo..hi, ..]).to_owned();
                let noise = batch.noise.slice(ndarray::s![lo..hi, ..]).to_owned();
                let inputs = LossInputs {
                    x: &x,
                    s: &batch.s[lo..hi],
                    y: labeled.then(|| &batch.y[lo..hi]),
                    noise: &noise,
                };
                let (v, _) = model.loss(tape, &bound, inputs, &weights, &layout).unwrap();
                Some((v, hi - lo))
            };
            let sup = part(tape, 0, labeled_rows, true);
            let unsup = part(tape, labeled_rows, rows, false);
            combine_on_tape(tape, sup, unsup).unwrap()
        }),
    }
}

/// A run configuration on the invariance data with short training.
pub fn quick_config(rows: usize, objective: &str, epochs: usize) -> RunConfig {
    let text = format!(
        r#"
        seeds = [0]
        [data]
        source = "invariance"
        rows = {rows}
        [objective]
        {objective}
        [model]
        latent_dim = 4
        hidden = [16, 16]
        [training]
        max_epochs = {epochs}
        [evaluation]
        trees = 10
        "#
    );
    ExperimentConfig::from_toml_str(&text).unwrap().run
}

pub fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
