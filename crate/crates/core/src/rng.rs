//! Reproducible random streams.
//!
//! Every random draw in a run comes from a ChaCha8 generator whose seed is a
//! mix of the run seed and a small tuple of coordinates (shot index, task id,
//! attempt number). Streams never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `words` into `seed`; order-sensitive.
pub fn mix(seed: u64, words: &[u64]) -> u64 {
    words
        .iter()
        .fold(splitmix64(seed), |acc, w| splitmix64(acc ^ splitmix64(*w)))
}

/// FNV-1a; stable across platforms and toolchains, unlike `DefaultHasher`.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn stream(seed: u64, words: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(mix(seed, words))
}
