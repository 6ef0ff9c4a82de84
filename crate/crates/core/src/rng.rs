//! Seed derivation. Every stochastic component draws from a ChaCha stream
//! keyed by a parent seed and a task path, so work can be split and reordered
//! without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `path` under `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Stable numeric tags for seed paths.
pub mod tag {
    pub const SYNTH: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const FOREST: u64 = 3;
    pub const IMPORTANCE: u64 = 4;
    pub const CV: u64 = 5;
    pub const MATCH: u64 = 6;
}
