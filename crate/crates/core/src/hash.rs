//! Jenkins one-at-a-time hashing.
//!
//! Every table in the pipeline derives its slot index from this hash over the
//! canonical 13-byte flow key encoding, each table with its own seed. The seed
//! is used as the initial accumulator, so seed 0 over an empty input hashes
//! to 0.

/// Jenkins one-at-a-time hash of `data`, starting from `seed`.
#[inline]
pub fn jenkins_hash(data: &[u8], seed: u32) -> u32 {
    let mut h = seed;
    for &b in data {
        h = h.wrapping_add(b as u32);
        h = h.wrapping_add(h << 10);
        h ^= h >> 6;
    }
    h = h.wrapping_add(h << 3);
    h ^= h >> 11;
    h = h.wrapping_add(h << 15);
    h
}
