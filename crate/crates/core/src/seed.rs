//! Deterministic RNG stream derivation.
//!
//! Every randomized stage owns an RNG seeded from the master seed plus a
//! stream label, so serial and reordered execution produce identical
//! results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// splitmix64 finalizer; stable across platforms and runs.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a master seed and a list of stream tags.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut s = mix(master);
    for &t in tags {
        s = mix(s ^ mix(t));
    }
    s
}

/// Hash a string label into a stream tag.
pub fn tag(label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

pub fn rng_for(master: u64, tags: &[u64]) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive(master, tags))
}
