//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by
//! `seed_from_u64(master_seed)`. Independent consumers use distinct stream
//! numbers of that generator: stream 0 for the top-level operation and
//! stream `b + 1` for replicate `b`. Replicate `b` therefore sees the same
//! numbers no matter which thread runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(master_seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Stream used by replicate `index` of a batch.
pub fn replicate(master_seed: u64, index: usize) -> StreamRng {
    stream(master_seed, index as u64 + 1)
}

/// Derives a child seed from a parent seed and a label, for operations that
/// take a plain `u64` seed themselves.
pub fn child_seed(master_seed: u64, label: u64) -> u64 {
    // splitmix64 finaliser over the combined value
    let mut z = master_seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
