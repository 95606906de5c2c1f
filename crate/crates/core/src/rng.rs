//! Counter-derived random streams.
//!
//! Every stochastic decision in the pipeline draws from a stream keyed by
//! `(master seed, purpose, counters...)`. Streams never depend on how many
//! draws another stream made, so a run resumed from a checkpoint only needs
//! the master seed and its position (epoch, step) to continue bit-identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// Stream purposes. Distinct tags keep streams independent for equal counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Crop = 3,
    View = 4,
    Mask = 5,
    Dropout = 6,
    Synth = 7,
    Split = 8,
    Probe = 9,
    Demo = 10,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a seed, a purpose tag and any number of counters into one 64-bit key.
pub fn derive_seed(seed: u64, stream: Stream, counters: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(stream as u64));
    for &c in counters {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, stream: Stream, counters: &[u64]) -> SeededRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, counters))
}
