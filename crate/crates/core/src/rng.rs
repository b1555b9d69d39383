//! The single seeded random source used by every generator and the trainer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier recorded in run manifests so results can be traced to the
/// exact generator.
pub const PRNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9, seed_from_u64, stream-selected)";

/// Independent random streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0,
    Data = 1,
    SourceBatches = 2,
    TargetBatches = 3,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
