//! Deterministic multiply-xor hashing for integer keys.
//!
//! The std `RandomState` randomizes per process, which would make map
//! iteration order (and anything derived from it) differ between runs. All
//! internal hash maps use this fixed hasher instead; every user-visible
//! ordering is still produced by explicit sorting.

use std::hash::{BuildHasherDefault, Hasher};

const K1: u64 = 0x9e37_79b9_7f4a_7c15;
const K2: u64 = 0xc2b2_ae3d_27d4_eb4f;

#[derive(Default)]
pub struct MixHasher {
    state: u64,
}

impl Hasher for MixHasher {
    #[inline]
    fn finish(&self) -> u64 {
        let mut h = self.state;
        h ^= h >> 33;
        h = h.wrapping_mul(K2);
        h ^= h >> 29;
        h
    }

    #[inline]
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.write_u64(u64::from(b));
        }
    }

    #[inline]
    fn write_u64(&mut self, v: u64) {
        self.state = (self.state ^ v).wrapping_mul(K1).rotate_left(23);
    }

    #[inline]
    fn write_u32(&mut self, v: u32) {
        self.write_u64(u64::from(v));
    }

    #[inline]
    fn write_u128(&mut self, v: u128) {
        self.write_u64(v as u64);
        self.write_u64((v >> 64) as u64);
    }

    #[inline]
    fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }
}

pub type MixState = BuildHasherDefault<MixHasher>;
pub type Map<K, V> = std::collections::HashMap<K, V, MixState>;
pub type Set<K> = std::collections::HashSet<K, MixState>;

/// Multiply-xor hash of three integer coordinates with large odd constants.
#[inline]
pub fn hash_coords(c: [i32; 3]) -> u64 {
    let x = (c[0] as u64).wrapping_mul(0x8da6_b343_usize as u64 | 1);
    let y = (c[1] as u64).wrapping_mul(0xd816_3841_u64 | 1);
    let z = (c[2] as u64).wrapping_mul(0xcb1a_b31f_u64 | 1);
    let mut h = x ^ y ^ z;
    h = h.wrapping_mul(K1);
    h ^= h >> 31;
    h
}
