use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DataError, Result};
use crate::seed::{self, Stream};

/// Train : validation : test proportions.
pub const SPLIT_RATIO: (usize, usize, usize) = (18, 2, 5);

const MIN_ROWS: usize = 25;

/// Disjoint, exhaustive row partition. Each part is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Rounded share `part / total` of `n`, ties away from zero.
fn share(n: usize, part: usize, total: usize) -> usize {
    (2 * n * part + total) / (2 * total)
}

/// Seeded shuffle of `0..n` cut into 18:2:5. Validation and test sizes are
/// rounded to nearest; the remainder goes to training.
pub fn split(n: usize, seed: u64) -> Result<Split> {
    if n < MIN_ROWS {
        return Err(DataError::TooFewRows {
            min: MIN_ROWS,
            actual: n,
        });
    }
    let (tr, va, te) = SPLIT_RATIO;
    let total = tr + va + te;
    let n_val = share(n, va, total);
    let n_test = share(n, te, total);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng(seed, Stream::Split, n as u64));
    let mut validation = order[..n_val].to_vec();
    let mut test = order[n_val..n_val + n_test].to_vec();
    let mut train = order[n_val + n_test..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train,
        validation,
        test,
    })
}

/// Label-visibility mask revealing exactly `per_class` training labels per class.
///
/// Rows outside `train` keep their labels visible. Asking for as many labels
/// as a class has training rows (or more) is an error: that would be full
/// supervision for the class.
pub fn mask_labels(y: &[bool], train: &[usize], per_class: usize, seed: u64) -> Result<Vec<bool>> {
    let mut mask = vec![true; y.len()];
    let mut rng = seed::rng(seed, Stream::Labels, per_class as u64);
    for class in [false, true] {
        let mut members = Vec::new();
        for &i in train {
            let &label = y.get(i).ok_or(DataError::IndexOutOfRange {
                index: i,
                rows: y.len(),
            })?;
            if label == class {
                members.push(i);
            }
        }
        if per_class >= members.len() {
            return Err(DataError::InsufficientLabels {
                class,
                available: members.len(),
                requested: per_class,
            });
        }
        members.shuffle(&mut rng);
        for &i in &members[per_class..] {
            mask[i] = false;
        }
    }
    Ok(mask)
}
