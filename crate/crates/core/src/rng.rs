//! Seeded random streams.
//!
//! All randomness flows from ChaCha8 generators. Each independent unit of
//! work (a count cell, a bootstrap resample, a sweep point) gets its own
//! stream keyed by `(seed, domain, index)`, which keeps results identical
//! between sequential and parallel runs and across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub mod domain {
    pub const SIGNAL: u64 = 1;
    pub const DARK: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const HISTOGRAM: u64 = 4;
    pub const SWEEP: u64 = 5;
    pub const FRINGE: u64 = 6;
    pub const TOMO: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed; used to give nested jobs their own seed space.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ index)
}

pub fn substream(seed: u64, domain: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}
