//! Seed derivation. Every random stream in a run is a child of the run seed,
//! keyed by what it is used for, so parallel or resumed execution draws
//! exactly the same numbers as a straight sequential run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent and an ordered list of keys.
pub fn derive(parent: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix(parent), |acc, &k| mix(acc ^ mix(k)))
}

/// FNV-1a over the bytes of `s`; stable across platforms and toolchains.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
