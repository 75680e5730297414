//! Deterministic seed fan-out.
//!
//! Child seeds are a pure function of a parent seed and a path of integer
//! coordinates (task, cell, round, refit, ...). Each coordinate is absorbed
//! with a SplitMix64 finaliser, so sibling streams are decorrelated and a cell
//! can be recomputed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags used when fanning out seeds inside the library.
pub mod tag {
    pub const SCHEDULE: u64 = 0x5343_4845;
    pub const ROUND: u64 = 0x524f_554e;
    pub const BASELINE: u64 = 0x4241_5345;
    pub const REPLICATE: u64 = 0x5245_504c;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const FIT: u64 = 0x4649_5421;
    pub const SWEEP: u64 = 0x5357_4550;
    pub const ORACLE: u64 = 0x4f52_4143;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a coordinate path.
pub fn derive(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(parent), |acc, &c| {
        splitmix64(acc ^ splitmix64(c))
    })
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
