use std::f64::consts::PI;
use std::fmt;

use ndarray::{s, Array2, Axis, Zip};

use super::{AutodiffError, Matrix, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Mul,
    Scale,
    Neg,
    Relu,
    Exp,
    Log,
    Sigmoid,
    RowSoftmax,
    ConcatCols,
    SliceCols,
    Clamp,
    Sum,
    Mean,
    KlStdNormal,
    GaussianNll,
    CategoricalCe,
    BinaryCe,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Neg => "negate",
            OpKind::Relu => "relu",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Sigmoid => "sigmoid",
            OpKind::RowSoftmax => "row_softmax",
            OpKind::ConcatCols => "concat_cols",
            OpKind::SliceCols => "slice_cols",
            OpKind::Clamp => "clamp",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::KlStdNormal => "kl_std_normal",
            OpKind::GaussianNll => "gaussian_nll",
            OpKind::CategoricalCe => "categorical_ce",
            OpKind::BinaryCe => "binary_ce",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add {
        lhs: usize,
        rhs: usize,
        broadcast: bool,
    },
    Mul(usize, usize),
    Scale(usize, f64),
    Neg(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    RowSoftmax(usize),
    ConcatCols(Vec<usize>),
    SliceCols {
        input: usize,
        start: usize,
    },
    Clamp {
        input: usize,
        lo: f64,
        hi: f64,
    },
    Sum(usize),
    Mean(usize),
    KlStdNormal {
        mu: usize,
        log_sigma: usize,
    },
    GaussianNll {
        x: usize,
        mean: usize,
        variances: Vec<f64>,
    },
    CategoricalCe {
        logits: usize,
        targets: Matrix,
    },
    BinaryCe {
        logits: usize,
        labels: Matrix,
    },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add { .. } => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Neg(..) => OpKind::Neg,
            Op::Relu(..) => OpKind::Relu,
            Op::Exp(..) => OpKind::Exp,
            Op::Log(..) => OpKind::Log,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::RowSoftmax(..) => OpKind::RowSoftmax,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::Clamp { .. } => OpKind::Clamp,
            Op::Sum(..) => OpKind::Sum,
            Op::Mean(..) => OpKind::Mean,
            Op::KlStdNormal { .. } => OpKind::KlStdNormal,
            Op::GaussianNll { .. } => OpKind::GaussianNll,
            Op::CategoricalCe { .. } => OpKind::CategoricalCe,
            Op::BinaryCe { .. } => OpKind::BinaryCe,
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Add { lhs, rhs, .. } => vec![*lhs, *rhs],
            Op::Scale(a, _)
            | Op::Neg(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::RowSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::ConcatCols(parts) => parts.clone(),
            Op::SliceCols { input, .. } | Op::Clamp { input, .. } => vec![*input],
            Op::KlStdNormal { mu, log_sigma } => vec![*mu, *log_sigma],
            Op::GaussianNll { x, mean, .. } => vec![*x, *mean],
            Op::CategoricalCe { logits, .. } | Op::BinaryCe { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Operation recording for one forward pass.
///
/// Nodes are stored in recording order, which is also a topological order.
/// A tape supports exactly one [`backward`](Tape::backward) call.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar loss with respect to every recorded node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient for `var`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes.get(var.id).copied().unwrap_or(var.shape());
                Array2::zeros((r, c))
            }
        }
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn row_softmax(values: &Matrix) -> Matrix {
    let mut out = values.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let total = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. Parameters pass `requires_grad = true`, data `false`.
    pub fn leaf(&mut self, value: Matrix, requires_grad: bool) -> Var {
        let (rows, cols) = value.dim();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            id: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value, false)
    }

    pub fn parameter(&mut self, value: Matrix) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.id].value
    }

    /// The single entry of a 1x1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.id].value[[0, 0]]
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.id].requires_grad
    }

    /// Kind of the operation that produced `var`.
    pub fn op_kind(&self, var: Var) -> OpKind {
        self.nodes[var.id].op.kind()
    }

    fn check(&self, var: Var) -> Result<()> {
        match self.nodes.get(var.id) {
            Some(node) if node.value.dim() == var.shape() => Ok(()),
            _ => Err(AutodiffError::UnknownVar(var.id)),
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> Result<Var> {
        let kind = op.kind();
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { op: kind });
        }
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        let (rows, cols) = value.dim();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            id: self.nodes.len() - 1,
            rows,
            cols,
        })
    }

    fn mismatch(op: OpKind, a: Var, b: Var) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if a.cols != b.rows {
            return Err(Self::mismatch(OpKind::MatMul, a, b));
        }
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a.id, b.id))
    }

    /// Elementwise sum; `b` may also be a `1 x cols` row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let broadcast = if a.shape() == b.shape() {
            false
        } else if b.rows == 1 && b.cols == a.cols {
            true
        } else {
            return Err(Self::mismatch(OpKind::Add, a, b));
        };
        let value = self.value(a) + self.value(b);
        self.push(
            value,
            Op::Add {
                lhs: a.id,
                rhs: b.id,
                broadcast,
            },
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        if a.shape() != b.shape() {
            return Err(Self::mismatch(OpKind::Mul, a, b));
        }
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a.id, b.id))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a) * factor;
        self.push(value, Op::Scale(a.id, factor))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = -self.value(a);
        self.push(value, Op::Neg(a.id))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).mapv(|v| v.max(0.0));
        self.push(value, Op::Relu(a.id))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a.id))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).mapv(f64::ln);
        self.push(value, Op::Log(a.id))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).mapv(stable_sigmoid);
        self.push(value, Op::Sigmoid(a.id))
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = row_softmax(self.value(a));
        self.push(value, Op::RowSoftmax(a.id))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::InvalidArgument {
                op: OpKind::ConcatCols,
                reason: "no inputs".into(),
            })?;
        for &p in parts {
            self.check(p)?;
            if p.rows != first.rows {
                return Err(Self::mismatch(OpKind::ConcatCols, first, p));
            }
        }
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts checked");
        self.push(value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check(a)?;
        if len == 0 || start + len > a.cols {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::SliceCols,
                reason: format!("columns {start}..{} out of {}", start + len, a.cols),
            });
        }
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::SliceCols { input: a.id, start })
    }

    /// Clamps into `[lo, hi]`; the gradient is passed only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.check(a)?;
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::Clamp,
                reason: format!("empty interval [{lo}, {hi}]"),
            });
        }
        let value = self.value(a).mapv(|v| v.clamp(lo, hi));
        self.push(
            value,
            Op::Clamp {
                input: a.id,
                lo,
                hi,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(value, Op::Sum(a.id))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        if a.rows * a.cols == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::Mean,
                reason: "mean of an empty matrix".into(),
            });
        }
        let value = Array2::from_elem((1, 1), self.value(a).mean().unwrap_or(0.0));
        self.push(value, Op::Mean(a.id))
    }

    /// Per-row `KL(N(mu, diag(exp(log_sigma))^2) || N(0, I))`, as a `rows x 1` column.
    pub fn kl_std_normal(&mut self, mu: Var, log_sigma: Var) -> Result<Var> {
        self.check(mu)?;
        self.check(log_sigma)?;
        if mu.shape() != log_sigma.shape() {
            return Err(Self::mismatch(OpKind::KlStdNormal, mu, log_sigma));
        }
        let m = self.value(mu);
        let ls = self.value(log_sigma);
        if m.iter().chain(ls.iter()).any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite {
                op: OpKind::KlStdNormal,
            });
        }
        let mut value = Array2::zeros((mu.rows, 1));
        for (i, (mr, lr)) in m.rows().into_iter().zip(ls.rows()).enumerate() {
            value[[i, 0]] = 0.5
                * mr.iter()
                    .zip(lr.iter())
                    .map(|(&u, &l)| u * u + (2.0 * l).exp() - 1.0 - 2.0 * l)
                    .sum::<f64>();
        }
        self.push(
            value,
            Op::KlStdNormal {
                mu: mu.id,
                log_sigma: log_sigma.id,
            },
        )
    }

    /// Batch mean of the Gaussian negative log-likelihood of `x` under
    /// `N(mean, diag(variances))`, summed over features.
    pub fn gaussian_nll(&mut self, x: Var, mean: Var, variances: &[f64]) -> Result<Var> {
        self.check(x)?;
        self.check(mean)?;
        if x.shape() != mean.shape() {
            return Err(Self::mismatch(OpKind::GaussianNll, x, mean));
        }
        if variances.len() != x.cols {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::GaussianNll,
                reason: format!("{} variances for {} features", variances.len(), x.cols),
            });
        }
        if let Some(v) = variances.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::GaussianNll,
                reason: format!("variance {v} is not strictly positive"),
            });
        }
        if x.rows == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::GaussianNll,
                reason: "empty batch".into(),
            });
        }
        let constant: f64 = variances.iter().map(|v| 0.5 * (2.0 * PI * v).ln()).sum();
        let xs = self.value(x);
        let ms = self.value(mean);
        let mut quad = 0.0;
        for (xr, mr) in xs.rows().into_iter().zip(ms.rows()) {
            for ((&a, &b), &v) in xr.iter().zip(mr.iter()).zip(variances) {
                let r = a - b;
                quad += r * r / (2.0 * v);
            }
        }
        let value = Array2::from_elem((1, 1), constant + quad / x.rows as f64);
        self.push(
            value,
            Op::GaussianNll {
                x: x.id,
                mean: mean.id,
                variances: variances.to_vec(),
            },
        )
    }

    /// Batch mean of `-log softmax(logits)[target]` via log-sum-exp.
    pub fn categorical_ce(&mut self, logits: Var, onehot: &Matrix) -> Result<Var> {
        self.check(logits)?;
        if onehot.dim() != logits.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: OpKind::CategoricalCe,
                lhs: logits.shape(),
                rhs: onehot.dim(),
            });
        }
        if logits.rows == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::CategoricalCe,
                reason: "empty batch".into(),
            });
        }
        if onehot
            .rows()
            .into_iter()
            .any(|r| (r.sum() - 1.0).abs() > 1e-9)
        {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::CategoricalCe,
                reason: "target rows must sum to 1".into(),
            });
        }
        let l = self.value(logits);
        let mut total = 0.0;
        for (lr, tr) in l.rows().into_iter().zip(onehot.rows()) {
            let max = lr.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + lr.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            total += lse - lr.iter().zip(tr.iter()).map(|(&a, &t)| a * t).sum::<f64>();
        }
        let value = Array2::from_elem((1, 1), total / logits.rows as f64);
        self.push(
            value,
            Op::CategoricalCe {
                logits: logits.id,
                targets: onehot.clone(),
            },
        )
    }

    /// Batch mean of the logistic loss `softplus(l) - y * l` for a `rows x 1` logit column.
    pub fn binary_ce(&mut self, logits: Var, labels: &Matrix) -> Result<Var> {
        self.check(logits)?;
        if labels.dim() != logits.shape() || logits.cols != 1 {
            return Err(AutodiffError::ShapeMismatch {
                op: OpKind::BinaryCe,
                lhs: logits.shape(),
                rhs: labels.dim(),
            });
        }
        if logits.rows == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::BinaryCe,
                reason: "empty batch".into(),
            });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(AutodiffError::InvalidArgument {
                op: OpKind::BinaryCe,
                reason: "labels must be 0 or 1".into(),
            });
        }
        let total: f64 = self
            .value(logits)
            .iter()
            .zip(labels.iter())
            .map(|(&l, &y)| softplus(l) - y * l)
            .sum();
        let value = Array2::from_elem((1, 1), total / logits.rows as f64);
        self.push(
            value,
            Op::BinaryCe {
                logits: logits.id,
                labels: labels.clone(),
            },
        )
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        self.check(loss)?;
        if loss.shape() != (1, 1) {
            return Err(AutodiffError::NonScalarLoss {
                rows: loss.rows,
                cols: loss.cols,
            });
        }
        self.consumed = true;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Array2::ones((1, 1)));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs = |i: usize| nodes[i].requires_grad;
            let emit =
                |grads: &mut Vec<Option<Matrix>>, i: usize, contribution: Matrix| match &mut grads
                    [i]
                {
                    Some(existing) => *existing += &contribution,
                    slot => *slot = Some(contribution),
                };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        emit(&mut grads, *a, g.dot(&nodes[*b].value.t()));
                    }
                    if needs(*b) {
                        emit(&mut grads, *b, nodes[*a].value.t().dot(&g));
                    }
                }
                Op::Add {
                    lhs,
                    rhs,
                    broadcast,
                } => {
                    if needs(*lhs) {
                        emit(&mut grads, *lhs, g.clone());
                    }
                    if needs(*rhs) {
                        let contribution = if *broadcast {
                            g.sum_axis(Axis(0)).insert_axis(Axis(0))
                        } else {
                            g.clone()
                        };
                        emit(&mut grads, *rhs, contribution);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        emit(&mut grads, *a, &g * &nodes[*b].value);
                    }
                    if needs(*b) {
                        emit(&mut grads, *b, &g * &nodes[*a].value);
                    }
                }
                Op::Scale(a, factor) => emit(&mut grads, *a, &g * *factor),
                Op::Neg(a) => emit(&mut grads, *a, -&g),
                Op::Relu(a) => {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(&nodes[*a].value).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    emit(&mut grads, *a, d);
                }
                Op::Exp(a) => emit(&mut grads, *a, &g * out),
                Op::Log(a) => emit(&mut grads, *a, &g / &nodes[*a].value),
                Op::Sigmoid(a) => {
                    let d = &g * &out.mapv(|p| p * (1.0 - p));
                    emit(&mut grads, *a, d);
                }
                Op::RowSoftmax(a) => {
                    let mut d = Array2::zeros(out.dim());
                    for ((mut dr, gr), pr) in d.rows_mut().into_iter().zip(g.rows()).zip(out.rows())
                    {
                        let dot: f64 = gr.iter().zip(pr.iter()).map(|(x, y)| x * y).sum();
                        Zip::from(&mut dr)
                            .and(&gr)
                            .and(&pr)
                            .for_each(|d, &gv, &p| *d = p * (gv - dot));
                    }
                    emit(&mut grads, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = nodes[p].value.ncols();
                        if needs(p) {
                            let d = g.slice(s![.., offset..offset + width]).to_owned();
                            emit(&mut grads, p, d);
                        }
                        offset += width;
                    }
                }
                Op::SliceCols { input, start } => {
                    let mut d = Array2::zeros(nodes[*input].value.dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    emit(&mut grads, *input, d);
                }
                Op::Clamp { input, lo, hi } => {
                    let mut d = g.clone();
                    Zip::from(&mut d)
                        .and(&nodes[*input].value)
                        .for_each(|d, &x| {
                            if x < *lo || x > *hi {
                                *d = 0.0;
                            }
                        });
                    emit(&mut grads, *input, d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(nodes[*a].value.dim(), g[[0, 0]]);
                    emit(&mut grads, *a, d);
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.len() as f64;
                    let d = Array2::from_elem(nodes[*a].value.dim(), g[[0, 0]] / n);
                    emit(&mut grads, *a, d);
                }
                Op::KlStdNormal { mu, log_sigma } => {
                    let gcol = g.column(0);
                    if needs(*mu) {
                        let mut d = nodes[*mu].value.clone();
                        for (mut row, &gi) in d.rows_mut().into_iter().zip(gcol.iter()) {
                            row.mapv_inplace(|m| gi * m);
                        }
                        emit(&mut grads, *mu, d);
                    }
                    if needs(*log_sigma) {
                        let mut d = nodes[*log_sigma].value.clone();
                        for (mut row, &gi) in d.rows_mut().into_iter().zip(gcol.iter()) {
                            row.mapv_inplace(|l| gi * ((2.0 * l).exp() - 1.0));
                        }
                        emit(&mut grads, *log_sigma, d);
                    }
                }
                Op::GaussianNll { x, mean, variances } => {
                    let scale = g[[0, 0]] / nodes[*x].value.nrows() as f64;
                    let mut d_mean = &nodes[*mean].value - &nodes[*x].value;
                    for mut row in d_mean.rows_mut() {
                        for (r, v) in row.iter_mut().zip(variances) {
                            *r *= scale / v;
                        }
                    }
                    if needs(*x) {
                        emit(&mut grads, *x, -&d_mean);
                    }
                    if needs(*mean) {
                        emit(&mut grads, *mean, d_mean);
                    }
                }
                Op::CategoricalCe { logits, targets } => {
                    let scale = g[[0, 0]] / targets.nrows() as f64;
                    let d = (row_softmax(&nodes[*logits].value) - targets) * scale;
                    emit(&mut grads, *logits, d);
                }
                Op::BinaryCe { logits, labels } => {
                    let scale = g[[0, 0]] / labels.nrows() as f64;
                    let mut d = nodes[*logits].value.mapv(stable_sigmoid);
                    d -= labels;
                    d *= scale;
                    emit(&mut grads, *logits, d);
                }
            }
            grads[id] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.dim()).collect(),
        })
    }
}
