//! Seeded random streams.
//!
//! Each stochastic subsystem draws from its own ChaCha stream so that, for a
//! fixed seed, changing one knob (say blocker density) leaves the deployment
//! and traffic realizations untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Deployment = 1,
    Mobility = 2,
    Channel = 3,
    Blockage = 4,
    Traffic = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
