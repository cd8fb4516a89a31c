//! Deterministic discrete-event core: event queue, ideal shared medium and
//! seeded random streams.

mod medium;
mod queue;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use medium::{ChannelState, Medium, Port, Reception, RxOutcome, Transmission, TxId};
pub use queue::{EventQueue, SimEvent};

/// Seeded source of decorrelated per-device random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    /// Stream `index`; the same `(seed, index)` always yields the same sequence.
    pub fn substream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}
