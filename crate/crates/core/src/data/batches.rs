use rand::seq::SliceRandom;

use crate::seed::{self, Stream};

/// One mini-batch of dataset row indices, partitioned by label visibility.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub rows: Vec<usize>,
    pub supervised: Vec<usize>,
    pub unsupervised: Vec<usize>,
}

/// Shuffles `train` with a per-epoch seed and cuts it into batches of at most
/// `batch_size` rows; the last batch may be smaller.
pub fn make_batches(
    train: &[usize],
    label_mask: &[bool],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Vec<Batch> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut order = train.to_vec();
    order.shuffle(&mut seed::rng(seed, Stream::Batches, epoch));
    order
        .chunks(batch_size)
        .map(|rows| {
            let (supervised, unsupervised) = rows.iter().partition(|&&i| label_mask[i]);
            Batch {
                rows: rows.to_vec(),
                supervised,
                unsupervised,
            }
        })
        .collect()
}
