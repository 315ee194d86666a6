//! Seeded generators and deterministic seed splitting.
//!
//! Every random stream derives from one root seed via [`derive_seed`], so
//! results never depend on the order in which independent work runs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for the stream identified by `path` under `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

pub fn derived(seed: u64, path: &[u64]) -> SeededRng {
    seeded(derive_seed(seed, path))
}

/// Stream tags used with [`derive_seed`].
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const AUGMENT: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const MC_SAMPLE: u64 = 7;
    pub const VALIDATION: u64 = 8;
}
