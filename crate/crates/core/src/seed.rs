//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from the run seed plus a fixed
//! stream tag (and optionally an index such as the epoch or fold), so runs
//! are reproducible and streams never overlap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    Labels = 2,
    Init = 3,
    Batches = 4,
    Noise = 5,
    Validation = 6,
    Probes = 7,
    Synthetic = 8,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `seed`, a stream tag and an index into one 64-bit seed.
pub fn derive(seed: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(seed);
    let b = splitmix64(a ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ index.wrapping_mul(0xA076_1D64_78BD_642F))
}

pub fn rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}
