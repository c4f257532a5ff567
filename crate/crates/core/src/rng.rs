//! Seeded random streams. Every consumer derives its own generator from
//! `(seed, purpose, owner, index)` so results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// What a derived stream is used for; keeps streams for different purposes disjoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Selection = 2,
    Shuffle = 3,
    Dropout = 4,
    Synthetic = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: Stream, owner: u64, index: u64) -> u64 {
    let mut h = splitmix64(seed);
    for part in [stream as u64, owner, index] {
        h = splitmix64(h ^ part);
    }
    h
}

pub fn stream_rng(seed: u64, stream: Stream, owner: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, stream, owner, index))
}
