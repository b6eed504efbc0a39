//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `parts` into `base` so that each distinct tuple gets its own stream.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(base, parts))
}

/// Stream tags. Keeping them in one place avoids accidental reuse.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const NEGATIVES: u64 = 3;
    pub const DROPOUT_GCN: u64 = 4;
    pub const DROPOUT_VIEW_X: u64 = 5;
    pub const DROPOUT_VIEW_Y: u64 = 6;
    pub const DROPOUT_MERGED: u64 = 7;
    pub const DROPOUT_NEGATIVE: u64 = 8;
    pub const SPLIT: u64 = 9;
    pub const RANDOM_FEATURES: u64 = 10;
    pub const SYNTH: u64 = 11;
}
