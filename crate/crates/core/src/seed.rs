//! Seed derivation.
//!
//! Every random decision is drawn from a stream whose seed is a pure function
//! of the master seed and a path of integers (arrival index, sample index,
//! threshold exponent, ...). Results are therefore identical no matter how
//! the work is scheduled.

use rand::rngs::SmallRng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep unrelated derivations from colliding.
pub mod tag {
    pub const DERIVATIVE: u64 = 0x6465_7269;
    pub const ROUNDING: u64 = 0x726f_756e;
    pub const OFFLINE: u64 = 0x6f66_666c;
    pub const FALLBACK: u64 = 0x6661_6c6c;
    pub const GENERATE: u64 = 0x6765_6e65;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `path` into `master`.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Cryptographic-quality stream for coarse-grained decisions.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, path))
}

/// Cheap stream for the per-sample hot path.
pub(crate) fn fast_stream(seed: u64) -> SmallRng {
    SmallRng::seed_from_u64(seed)
}
