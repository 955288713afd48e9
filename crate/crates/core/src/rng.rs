//! Seed plumbing. Every random component draws from its own ChaCha stream
//! derived from a base seed and a stream tag.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer over `base` and `stream`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod stream {
    pub const INIT: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const TS_META: u64 = 3;
    pub const TS_ITER: u64 = 4;
    pub const TARGET_FN: u64 = 5;
    pub const META_TASKS: u64 = 6;
}
