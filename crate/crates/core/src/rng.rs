//! Counter-keyed random streams.
//!
//! Every per-item stream is ChaCha8 keyed by the global seed with the item
//! index as the stream id, so results do not depend on scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the family keyed by `global_seed`.
pub fn stream(global_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
    rng.set_stream(index);
    rng
}

/// A 64-bit seed unique to `(global_seed, index)`.
pub fn derive_seed(global_seed: u64, index: u64) -> u64 {
    stream(global_seed, index).next_u64()
}
