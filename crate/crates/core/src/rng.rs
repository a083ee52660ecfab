//! Seeded random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! a 64-bit seed and a stream id, so results are reproducible across
//! platforms and independent of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream ids used inside one replication.
pub mod streams {
    pub const DATA: u64 = 0;
    pub const POSTERIOR: u64 = 1;
    pub const DIRZ: u64 = 2;
    pub const ORACLE: u64 = 3;
}

/// SplitMix64 finalizer applied to `seed + index * golden_gamma`.
pub fn mix(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
