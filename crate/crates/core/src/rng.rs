//! Seeded random streams.
//!
//! Every stochastic step takes a caller-provided `&mut impl Rng`. Replicates
//! derive their stream from a master seed plus a stream counter, so results do
//! not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream `index` of the master seed.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
