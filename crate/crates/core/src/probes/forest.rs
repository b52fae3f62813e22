use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ProbeError, Result};
use crate::autodiff::Matrix;
use crate::seed::{self, Stream};

/// Number of features examined at each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaxFeatures {
    Sqrt,
    Third,
    All,
}

impl MaxFeatures {
    fn count(self, d: usize) -> usize {
        let k = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Third => d / 3,
            MaxFeatures::All => d,
        };
        k.clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    /// 100 Gini trees, `sqrt(d)` features per split, unlimited depth.
    pub fn classifier(seed: u64) -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            seed,
        }
    }

    /// 100 variance-reduction trees, `d/3` features per split, depth at most 8.
    pub fn regressor(seed: u64) -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: Some(8),
            max_features: MaxFeatures::Third,
            bootstrap: true,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// CART tree minimizing the within-node sum of squares.
///
/// For 0/1 targets the weighted Gini impurity of a node is exactly twice its
/// sum of squared deviations, so the same split search serves classification
/// (leaves hold the positive fraction) and regression (leaves hold the mean).
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn best_split(
    x: &Matrix,
    target: &[f64],
    rows: &[usize],
    features: &[usize],
    max_features: usize,
    scratch: &mut Vec<(f64, f64)>,
) -> Option<SplitChoice> {
    let n = rows.len() as f64;
    let total: f64 = rows.iter().map(|&r| target[r]).sum();
    let mut best: Option<SplitChoice> = None;
    let mut examined = 0;
    for &f in features {
        if examined >= max_features {
            break;
        }
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (x[[r, f]], target[r])));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[scratch.len() - 1].0 {
            continue;
        }
        examined += 1;
        let mut left_sum = 0.0;
        for i in 0..scratch.len() - 1 {
            left_sum += scratch[i].1;
            let (v, next) = (scratch[i].0, scratch[i + 1].0);
            if v == next {
                continue;
            }
            let nl = (i + 1) as f64;
            let right_sum = total - left_sum;
            // maximizing this minimizes the children's total sum of squares
            let score = left_sum * left_sum / nl + right_sum * right_sum / (n - nl);
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mid = v + (next - v) / 2.0;
                let threshold = if mid < next { mid } else { v };
                best = Some(SplitChoice {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

impl DecisionTree {
    pub fn fit<R: Rng>(
        x: &Matrix,
        target: &[f64],
        sample: Vec<usize>,
        max_depth: Option<usize>,
        max_features: usize,
        rng: &mut R,
    ) -> Self {
        let d = x.ncols();
        let mut rows = sample;
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![(0usize, 0usize, rows.len(), 0usize)];
        let mut features: Vec<usize> = (0..d).collect();
        let mut scratch = Vec::with_capacity(rows.len());

        while let Some((id, start, end, depth)) = stack.pop() {
            let slice = &mut rows[start..end];
            let mean = slice.iter().map(|&r| target[r]).sum::<f64>() / slice.len() as f64;
            let pure = slice.iter().all(|&r| target[r] == target[slice[0]]);
            if pure || slice.len() < 2 || max_depth.is_some_and(|m| depth >= m) {
                nodes[id] = Node::Leaf(mean);
                continue;
            }
            features.shuffle(rng);
            let Some(choice) = best_split(x, target, slice, &features, max_features, &mut scratch)
            else {
                nodes[id] = Node::Leaf(mean);
                continue;
            };
            // partition: rows going left first
            let mut mid = 0;
            for i in 0..slice.len() {
                if x[[slice[i], choice.feature]] <= choice.threshold {
                    slice.swap(i, mid);
                    mid += 1;
                }
            }
            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[id] = Node::Split {
                feature: choice.feature,
                threshold: choice.threshold,
                left,
                right: left + 1,
            };
            stack.push((left + 1, start + mid, end, depth + 1));
            stack.push((left, start, start + mid, depth + 1));
        }
        DecisionTree { nodes }
    }

    pub fn predict_row(&self, row: ndarray::ArrayView1<f64>) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match &nodes[id] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Bagged ensemble of [`DecisionTree`]s; predictions are tree averages.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(x: &Matrix, target: &[f64], config: &ForestConfig) -> Result<Self> {
        super::check_rows(x, target.len())?;
        if x.ncols() == 0 {
            return Err(ProbeError::Empty("feature matrix has no columns"));
        }
        let n = target.len();
        let max_features = config.max_features.count(x.ncols());
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed::derive(config.seed, Stream::Probes, t as u64));
                let sample = if config.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                DecisionTree::fit(x, target, sample, config.max_depth, max_features, &mut rng)
            })
            .collect();
        Ok(RandomForest { trees })
    }

    pub fn fit_classifier(x: &Matrix, y: &[bool], config: &ForestConfig) -> Result<Self> {
        let t: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
        Self::fit(x, &t, config)
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let k = self.trees.len() as f64;
        x.rows()
            .into_iter()
            .map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / k)
            .collect()
    }

    /// Majority vote by averaged leaf probabilities, threshold 0.5.
    pub fn predict_class(&self, x: &Matrix) -> Vec<bool> {
        self.predict(x).into_iter().map(|p| p > 0.5).collect()
    }
}
