//! Named seed derivation.
//!
//! Every random stream in the crate comes from a ChaCha8 generator whose seed
//! is `derive_seed(master, purpose, id)`. The mix is a fixed FNV-1a pass over
//! the tag bytes followed by a splitmix64 finalizer, so derived seeds are
//! stable across platforms, compiler versions and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with a purpose tag and an item id.
pub fn derive_seed(master: u64, purpose: &str, id: &str) -> u64 {
    let mut h = fnv1a(FNV_OFFSET, &master.to_le_bytes());
    h = fnv1a(h, purpose.as_bytes());
    // separator so ("ab", "c") and ("a", "bc") differ
    h = fnv1a(h, &[0xff]);
    h = fnv1a(h, id.as_bytes());
    splitmix64(h)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, purpose: &str, id: &str) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, purpose, id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_tag_sensitive() {
        assert_eq!(derive_seed(1, "walk", "c1"), derive_seed(1, "walk", "c1"));
        assert_ne!(derive_seed(1, "walk", "c1"), derive_seed(2, "walk", "c1"));
        assert_ne!(derive_seed(1, "walk", "c1"), derive_seed(1, "split", "c1"));
        assert_ne!(derive_seed(1, "ab", "c"), derive_seed(1, "a", "bc"));
    }

    #[test]
    fn derived_streams_replay() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(derived_rng(9, "x", "y"), |r, _: u64| Some(r.gen())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(derived_rng(9, "x", "y"), |r, _: u64| Some(r.gen())).collect();
        assert_eq!(a, b);
    }
}
