//! Position-addressed random streams.
//!
//! Every uniform used by a sampler is addressed by `(seed, lane, position)`: the lane
//! is the candidate index inside a decode (0 for plain sampling) and the position is
//! the absolute response position of the token being drawn. Two samplers that agree
//! on those coordinates consume identical randomness, which is what makes base
//! sampling, `K = 1` blockwise decoding and `λ = 0` tokenwise decoding coincide bit
//! for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Lane reserved for drawing the prompt of a rollout.
const PROMPT_LANE: u64 = u64::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&self, lane: u64, position: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(lane);
        rng.set_word_pos(2 * position as u128);
        (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn prompt_uniform(&self) -> f64 {
        self.uniform(PROMPT_LANE, 0)
    }

    /// Stream for the `index`-th child of this one (per-rollout and per-row seeds).
    pub fn child(&self, index: u64) -> RandomStream {
        RandomStream::new(derive_seed(self.seed, index))
    }
}

/// Deterministically derives an independent seed from `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}
