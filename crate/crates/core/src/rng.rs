//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by `(seed, purpose, indices...)`, so adding draws for one
//! purpose never shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix64(seed), |acc, &p| mix64(acc ^ mix64(p)))
}

pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

/// Stable 64-bit hash of a label (FNV-1a), for keying streams by name.
pub fn label_hash(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Purpose tags for [`stream`].
pub mod purpose {
    pub const COURSE: u64 = 1;
    pub const ALIASING: u64 = 2;
    pub const ODOMETRY: u64 = 3;
    pub const RETRIEVAL: u64 = 4;
    pub const ORACLE: u64 = 5;
    pub const LOOP_MEASUREMENT: u64 = 6;
    pub const HYPOTHESIS_STRATEGY: u64 = 10;
    pub const HYPOTHESIS_PICK: u64 = 11;
    pub const CONSTRAINT_STRATEGY: u64 = 12;
    pub const CONSTRAINT_PICK: u64 = 13;
    pub const NEIGHBOR_PICK: u64 = 14;
    pub const FALLBACK_PICK: u64 = 15;
    pub const TRIAL: u64 = 20;
}
