use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::NnError;
use crate::autodiff::{Matrix, Tape, Var};

/// Anything that owns trainable matrices in a fixed order.
pub trait Module {
    fn parameters(&self) -> Vec<&Matrix>;
    fn parameters_mut(&mut self) -> Vec<&mut Matrix>;

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Records every parameter of `module` on `tape`, in [`Module::parameters`] order.
///
/// With `trainable = false` the parameters enter as constants and no
/// gradient is tracked for them (evaluation mode).
pub fn bind<M: Module + ?Sized>(tape: &mut Tape, module: &M, trainable: bool) -> Vec<Var> {
    module
        .parameters()
        .into_iter()
        .map(|p| tape.leaf(p.clone(), trainable))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `in_dim x out_dim`
    pub weight: Matrix,
    /// `1 x out_dim`
    pub bias: Matrix,
}

impl DenseLayer {
    /// He-scaled normal weights (`std = sqrt(2 / in_dim)`) and zero bias.
    pub fn he<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
        let weight = Array2::from_shape_simple_fn((in_dim, out_dim), || normal.sample(rng));
        Self {
            weight,
            bias: Array2::zeros((1, out_dim)),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((in_dim, out_dim)),
            bias: Array2::zeros((1, out_dim)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// `input @ weight + bias` using already-bound `[weight, bias]`.
    pub fn forward(tape: &mut Tape, bound: &[Var], input: Var) -> Result<Var, NnError> {
        if bound.len() != 2 {
            return Err(NnError::BindingCount {
                expected: 2,
                actual: bound.len(),
            });
        }
        let pre = tape.matmul(input, bound[0])?;
        Ok(tape.add(pre, bound[1])?)
    }

    pub fn is_finite(&self) -> bool {
        self.weight
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }
}

impl Module for DenseLayer {
    fn parameters(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of dense layers with ReLU between them and identity at the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

impl Mlp {
    /// `dims = [input, hidden.., output]`, He-initialized.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self, NnError> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::he(w[0], w[1], rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Dimensions(
                "an MLP needs at least one layer".into(),
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NnError::Dimensions(format!(
                    "layer output {} does not chain into input {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    fn check_dims(dims: &[usize]) -> Result<(), NnError> {
        if dims.len() < 2 {
            return Err(NnError::Dimensions(format!(
                "need at least 2 dims, got {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(NnError::Dimensions(format!("zero-width layer in {dims:?}")));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    /// Number of matrices this network binds (two per layer).
    pub fn num_tensors(&self) -> usize {
        2 * self.layers.len()
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], input: Var) -> Result<Var, NnError> {
        if bound.len() != self.num_tensors() {
            return Err(NnError::BindingCount {
                expected: self.num_tensors(),
                actual: bound.len(),
            });
        }
        let mut h = input;
        let last = self.layers.len() - 1;
        for (i, pair) in bound.chunks(2).enumerate() {
            h = DenseLayer::forward(tape, pair, h)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

impl Module for Mlp {
    fn parameters(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.parameters_mut())
            .collect()
    }
}
