//! Seed derivation so that every stochastic component gets its own stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, tag: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, tag))
}

pub mod tags {
    pub const CENTERS: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const PARTITION: u64 = 3;
    pub const FLEET: u64 = 4;
    pub const MODEL_INIT: u64 = 5;
    pub const KMEANS: u64 = 6;
    pub const MEASURE: u64 = 7;
    pub const BATCHES: u64 = 8;
    pub const RANDOM_PLAN: u64 = 9;
    pub const TEST_SAMPLES: u64 = 10;
    pub const BANDWIDTH: u64 = 11;
}
