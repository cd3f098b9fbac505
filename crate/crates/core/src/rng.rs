//! Deterministic, splittable random streams.
//!
//! Every consumer of randomness draws from a ChaCha8 generator keyed by a
//! `(seed, stream)` pair, so encodings, parameter initialization, probes and
//! minibatch shuffles never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Encoding = 1,
    Init = 2,
    Probe = 3,
    Shuffle = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    substream_rng(seed, stream, 0)
}

/// Retry substreams for rejection sampling; `attempt` 0 is the primary stream.
pub fn substream_rng(seed: u64, stream: Stream, attempt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | attempt);
    rng
}

/// Seed of trial `index` derived from a base seed.
pub fn trial_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}
