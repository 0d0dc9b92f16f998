//! Counter-style random streams.
//!
//! Every random decision is drawn from a ChaCha8 stream whose seed is a
//! stable hash of `(seed, tags...)`, so results depend only on *which* draw is
//! being made (epoch, item, candidate, ...) and never on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hash::StableHasher;

/// Stream purposes; mixed into every derived seed.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const DATA_ORDER: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const SAMPLING: u64 = 4;
    pub const MRT_ORDER: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const EVAL_NOISE: u64 = 7;
}

pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut h = StableHasher::new();
    h.write_u64(seed);
    for &t in tags {
        h.write_u64(t);
    }
    h.finish()
}

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// A seed plus a tag path; `child` extends the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey(pub u64);

impl StreamKey {
    pub fn new(seed: u64, tags: &[u64]) -> Self {
        Self(derive_seed(seed, tags))
    }

    pub fn child(self, index: u64) -> Self {
        Self(derive_seed(self.0, &[index]))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
