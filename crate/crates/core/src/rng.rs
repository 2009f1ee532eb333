//! Deterministic seeding. Every random draw in the crate comes from a
//! `ChaCha8Rng` whose seed is derived from a master seed and an index, so
//! results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `idx` under `seed`.
pub fn hash64(seed: u64, idx: u64) -> u64 {
    mix64(seed ^ mix64(idx))
}

pub fn stream(seed: u64, idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(hash64(seed, idx))
}
