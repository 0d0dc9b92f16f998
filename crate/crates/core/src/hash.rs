//! Platform-independent 64-bit hashing.
//!
//! Fingerprints, the stub embedding and all seed derivation go through this
//! hasher so their outputs are bit-exact everywhere. The scheme is FNV-1a over
//! little-endian bytes (offset basis `0xcbf29ce484222325`, prime
//! `0x100000001b3`) followed by the SplitMix64 finalizer
//! (`0xbf58476d1ce4e5b9`, `0x94d049bb133111eb`, shifts 30/27/31).

pub const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
pub struct StableHasher {
    state: u64,
}

impl Default for StableHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl StableHasher {
    pub fn new() -> Self {
        Self { state: FNV_OFFSET }
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.state ^= u64::from(b);
            self.state = self.state.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub fn write_u64(&mut self, v: u64) -> &mut Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_i64(&mut self, v: i64) -> &mut Self {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn finish(&self) -> u64 {
        mix64(self.state)
    }
}

/// Hash a sequence of words in one call.
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = StableHasher::new();
    for &w in words {
        h.write_u64(w);
    }
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_core_matches_reference_vector() {
        // FNV-1a("a") = 0xaf63dc4c8601ec8c before finalization.
        let mut h = StableHasher::new();
        h.write_bytes(b"a");
        assert_eq!(h.state, 0xaf63_dc4c_8601_ec8c);
        assert_eq!(h.finish(), mix64(0xaf63_dc4c_8601_ec8c));
    }

    #[test]
    fn word_order_matters() {
        assert_ne!(hash_words(&[1, 2]), hash_words(&[2, 1]));
        assert_eq!(hash_words(&[7, 9]), hash_words(&[7, 9]));
    }
}
