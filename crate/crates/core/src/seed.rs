//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! keyed by a SplitMix64 mix of the run seed and a stream label, so streams
//! are independent of each other and of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive combination of two words.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b).rotate_left(17))
}

pub fn mix_all(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |acc, &w| mix(acc, w))
}

/// Uniform in `[0, 1)` from a hash word.
pub fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Named streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Manifest = 1,
    Fingerprint = 2,
    Scene = 3,
    Init = 4,
    Sampler = 5,
    Augment = 6,
    Mask = 7,
    Dropout = 8,
    Probe = 9,
    RgbNoise = 10,
    FixedPattern = 11,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream as u64))
}

pub fn rng_at(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_all(&[seed, stream as u64, index]))
}
