//! Seeded random streams. Every replicate owns an independent ChaCha stream
//! addressed by `(master seed, replicate index)`, so ensembles reproduce
//! bit-for-bit regardless of how replicates are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn replicate_rng(master_seed: u64, replicate: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

/// Stream index for replicate `replicate` of experiment arm `arm`.
pub fn stream_id(arm: u64, replicate: u64) -> u64 {
    (arm << 40) | (replicate & ((1 << 40) - 1))
}
