//! Labeled random substreams derived from a single run seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Independent consumers of randomness within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Trace = 1,
    TraceSizes = 2,
    Bagging = 3,
    Sampler = 4,
    Stall = 5,
}

/// A generator for `stream`, independent of every other stream of the same seed.
pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A derived 64-bit seed, for components that take a seed rather than a generator.
pub fn derive_seed(seed: u64, stream: Stream) -> u64 {
    substream(seed, stream).next_u64()
}
