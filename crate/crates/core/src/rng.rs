//! Seeded random streams.
//!
//! Every randomised item (a soundscape, a sample, a training run) draws
//! from its own ChaCha stream keyed by `(seed, purpose, index)`, so results
//! do not depend on processing order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream purposes; distinct constants keep streams independent.
pub mod purpose {
    pub const TOY_BANK: u64 = 1;
    pub const SOUNDSCAPE: u64 = 2;
    pub const POSITIVES: u64 = 3;
    pub const NEGATIVES: u64 = 4;
    pub const WEAK_NEGATIVES: u64 = 5;
    pub const INIT: u64 = 6;
    pub const TRAIN: u64 = 7;
    pub const CHANCE: u64 = 8;
    pub const SPLIT: u64 = 9;
}

pub fn stream(seed: u64, purpose: u64, index: u64) -> Rng {
    let key = seed ^ purpose.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
