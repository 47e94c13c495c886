//! Seeded random streams. Every consumer draws from its own ChaCha stream
//! derived from the run seed, so adding randomness in one stage never shifts
//! another stage's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Folds,
    KMeans,
    Subsample,
    Annotation,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Folds => 1,
            Stream::KMeans => 2,
            Stream::Subsample => 3,
            Stream::Annotation => 4,
        }
    }
}

/// Generator for `stream` under `seed`; `lane` separates independent users
/// of the same stream (e.g. one k-means run per category).
pub fn stream_rng(seed: u64, stream: Stream, lane: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.id() << 32) | (lane & 0xffff_ffff));
    rng
}
