//! Seed derivation for independent random streams.
//!
//! Every stochastic step (block sizes, perturbation, view noise, k-means
//! restarts) draws from its own stream so that adding a method or a view never
//! shifts the random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes `base` with a stream tag (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `index` of an experiment started from `base`.
pub fn replication_seed(base: u64, index: u64) -> u64 {
    base ^ index
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) mod streams {
    pub const BLOCK_SIZES: u64 = 1;
    pub const PERTURB: u64 = 2;
    pub const VIEW_NOISE: u64 = 100;
    pub const PILOT_KMEANS: u64 = 200;
    pub const FINAL_KMEANS: u64 = 201;
    pub const BASELINE_KMEANS: u64 = 300;
    pub const METHOD: u64 = 400;
    pub const RESTART: u64 = 1000;
}
