//! Reproducible random streams.
//!
//! A trial is identified by `(root, stream)`. Both words go into the
//! ChaCha8 key, so distinct pairs give distinct generators; the ChaCha
//! stream id then separates sub-tasks (batches, walkers) of one trial.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub root: u64,
    pub stream: u64,
}

impl RngSeed {
    pub fn new(root: u64, stream: u64) -> Self {
        RngSeed { root, stream }
    }

    /// Generator for the trial itself (sub-stream 0).
    pub fn rng(&self) -> ChaCha8Rng {
        self.substream(0)
    }

    pub fn substream(&self, sub: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.root.to_le_bytes());
        key[8..16].copy_from_slice(&self.stream.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(sub);
        rng
    }

    /// Seed for trial `k` of a family rooted at this seed.
    pub fn trial(&self, k: u64) -> RngSeed {
        RngSeed { root: self.root, stream: self.stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k }
    }
}
