//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a `u64`.
//! Child seeds are derived from a parent seed and a key with
//! [`derive_seed`], which is the SplitMix64 finalizer applied to
//! `parent ^ splitmix64(key + GOLDEN)`. The function is fixed and
//! platform-independent, so repetition `i` of a run can be reproduced on its
//! own from the master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `key` under `parent`.
pub fn derive_seed(parent: u64, key: u64) -> u64 {
    splitmix64(parent ^ splitmix64(key))
}

/// Folds several keys into one child seed, left to right.
pub fn derive_seed_path(parent: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(parent, |s, &k| derive_seed(s, k))
}

/// FNV-1a over bytes; used to key seeds by participant id so a
/// participant's stream does not depend on cohort composition.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A seed for runs where the user did not give one. Recorded in output
/// metadata by callers.
pub fn fresh_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    splitmix64(nanos ^ (std::process::id() as u64).rotate_left(32))
}
