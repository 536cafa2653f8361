//! Stable 64-bit hashing (FNV-1a).
//!
//! `std`'s hasher is randomized per process, so every place that needs a
//! reproducible index (embedding tables, string addresses, uninterpreted
//! call results) goes through these helpers instead.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub fn fnv1a_str(s: &str) -> u64 {
    fnv1a(s.as_bytes())
}

/// Hash a string together with a list of 64-bit words.
pub fn fnv1a_mixed(s: &str, words: &[i64]) -> u64 {
    let mut h = fnv1a_str(s);
    for &w in words {
        for b in w.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}
