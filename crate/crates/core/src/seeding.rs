//! Seed derivation.
//!
//! Every stochastic step that runs per record draws from its own stream, keyed
//! by the global seed and the record id, so results do not depend on the
//! order in which a worker pool visits records.
//!
//! The derivation is `splitmix64(splitmix64(seed) ^ fnv1a64(id))`, where
//! `fnv1a64` is the 64-bit FNV-1a hash of the id's UTF-8 bytes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Seed for the stream owned by record `id`.
pub fn record_seed(seed: u64, id: &str) -> u64 {
    splitmix64(splitmix64(seed) ^ fnv1a64(id.as_bytes()))
}

pub fn record_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(record_seed(seed, id))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
