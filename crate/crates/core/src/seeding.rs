//! Deterministic seed derivation. Every randomized stage draws from a seed
//! mixed out of the global seed and its coordinates (corpus index, epoch,
//! draw index), so reruns are bitwise reproducible and examples can be
//! processed in any order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of coordinates into a new seed.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(seed);
    for &p in parts {
        state = splitmix64(state ^ p);
    }
    state
}

/// Seed for a per-example draw: (global seed, corpus index, epoch).
pub fn example_seed(global_seed: u64, corpus_index: usize, epoch: usize) -> u64 {
    mix(global_seed, &[corpus_index as u64, epoch as u64])
}

/// ChaCha RNG from a derived seed; the stream is identical on every platform.
pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
