//! Deterministic random stream derivation.
//!
//! Every source of randomness in a run is a pure function of
//! `(base seed, purpose, epoch, index)`. Streams for different purposes are
//! statistically independent, and resuming a run at epoch `e` reproduces the
//! exact byte stream a fresh run would have drawn at epoch `e`, because no
//! stream's state depends on how many draws another stream made.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; full-avalanche mixing of one 64-bit lane.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_str(s: &str) -> u64 {
    // FNV-1a over UTF-8 bytes
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in s.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Collapses `(base, purpose, epoch, index)` into one stream seed.
pub fn derive_seed(base: u64, purpose: &str, epoch: u64, index: u64) -> u64 {
    let mut z = mix(base);
    z = mix(z ^ hash_str(purpose));
    z = mix(z ^ epoch);
    mix(z ^ index)
}

/// A fresh generator for one `(purpose, epoch, index)` slot.
pub fn stream(base: u64, purpose: &str, epoch: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, purpose, epoch, index))
}
