//! Seed derivation for reproducible, independent RNG streams. Every
//! randomized component seeds a fresh generator from (master seed, a salt
//! naming the component, the keys that identify the draw), so results never
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over length-prefixed parts. Length prefixes keep ("ab","c") and
/// ("a","bc") distinct.
pub(crate) fn fold(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    };
    for p in parts {
        eat(&(p.len() as u64).to_le_bytes());
        eat(p);
    }
    h
}

pub(crate) fn rng(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(fold(seed, parts))
}
