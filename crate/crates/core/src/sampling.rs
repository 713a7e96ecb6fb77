//! Counter-based randomness.
//!
//! Every random draw is a pure function of `(seed, index)`: the pair is hashed
//! with the SplitMix64 finalizer and the result seeds a per-index SplitMix64
//! generator. Splitting an index range across workers therefore never changes
//! what any index sees.

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::rotations::Rotation;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hash of a seed and a stream index.
pub fn stream_key(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed.wrapping_add(GOLDEN)) ^ index.wrapping_mul(GOLDEN).wrapping_add(1))
}

/// A seed for an independent sub-stream (e.g. witnesses vs. test points).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    stream_key(seed ^ 0xD1B5_4A32_D192_ED03, tag)
}

/// The generator owned by one sample index.
pub fn rng_at(seed: u64, index: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(stream_key(seed, index))
}

/// The Haar-random rotation assigned to `(seed, index)`.
pub fn haar_at(seed: u64, index: u64) -> Rotation {
    Rotation::haar_sample(&mut rng_at(seed, index))
}
