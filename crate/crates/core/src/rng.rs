//! Seed-substream derivation.
//!
//! All randomness in a run flows from a single config seed through named
//! substreams (`taskgen`, `sft`, `rl1`, `rl2`, `eval`, ...). The derivation is
//! a hand-rolled FNV-1a + splitmix64 finalizer so the mapping is stable across
//! Rust releases — std's `DefaultHasher` gives no such guarantee.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(init: u64, bytes: &[u8]) -> u64 {
    let mut h = init;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from `(seed, tag)`.
pub fn substream(seed: u64, tag: &str) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    splitmix64(fnv1a(h, tag.as_bytes()))
}

/// Derive a child seed from `(seed, tag, n)` — per-item streams.
pub fn substream_n(seed: u64, tag: &str, n: u64) -> u64 {
    let h = fnv1a(FNV_OFFSET, &seed.to_le_bytes());
    let h = fnv1a(h, tag.as_bytes());
    splitmix64(fnv1a(h, &n.to_le_bytes()))
}

/// The crate-wide RNG, seeded from a substream value.
pub fn rng_from(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}
