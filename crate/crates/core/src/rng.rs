//! Seeded random streams.
//!
//! Every stochastic routine takes a `&mut Rng` explicitly. Independent
//! consumers (tasks, seeds, pipeline stages) get their own stream derived from
//! a root seed and a stream id, so results never depend on call interleaving.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Root stream for a run.
pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-stream `stream` of `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child stream from a parent; advances the parent.
pub fn split(parent: &mut Rng) -> Rng {
    use rand::Rng as _;
    let seed: u64 = parent.random();
    let id: u64 = parent.random();
    stream(seed, id)
}
