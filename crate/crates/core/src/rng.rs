//! Seed derivation. Every random stream in an experiment is a ChaCha8
//! generator keyed by the experiment seed plus a purpose tag, so streams do
//! not shift when an unrelated part of the pipeline draws more numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a list of stream coordinates into one seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, &p| mix(acc ^ mix(p)))
}

pub fn rng_for(seed: u64, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Purpose tags for [`derive_seed`].
pub mod stream {
    pub const BACKBONE: u64 = 1;
    pub const HEAD: u64 = 2;
    pub const TASKS: u64 = 3;
    pub const MEMORY: u64 = 4;
    pub const DOMAIN_ORDER: u64 = 5;
    pub const BATCHES: u64 = 6;
    pub const DATA: u64 = 7;
}
