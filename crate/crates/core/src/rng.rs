//! Deterministic random streams.
//!
//! Every consumer of randomness in a simulation gets its own ChaCha stream
//! derived from the run seed, so that policies compared on the same seed see
//! the same world, the same arrivals and the same channel noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    World = 1,
    Arrivals = 2,
    Users = 3,
    Mobility = 4,
    Channel = 5,
    Model = 6,
}

pub fn stream(seed: u64, which: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
