//! Seeded randomness helpers shared by the generators and trainers.
//!
//! Every stochastic component takes an explicit ChaCha stream so that runs
//! are reproducible bit-for-bit from a single master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Draws an index from an explicit categorical distribution.
///
/// Probabilities must be nonnegative and sum to 1 within 1e-6.
pub fn sample_categorical(probs: &[f32], rng: &mut ChaCha8Rng) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::InvalidDistribution("empty probability vector".into()));
    }
    let mut sum = 0.0f64;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidDistribution(format!(
                "probabilities must be finite and nonnegative, got {p}"
            )));
        }
        sum += p as f64;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(format!(
            "probabilities sum to {sum}, expected 1 within 1e-6"
        )));
    }
    let u: f64 = rng.gen::<f64>() * sum;
    let mut cum = 0.0f64;
    let mut last_nonzero = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = i;
        }
        cum += p as f64;
        if u < cum && p > 0.0 {
            return Ok(i);
        }
    }
    // Rounding pushed u past the accumulated mass; the draw belongs to the
    // last index with positive probability.
    Ok(last_nonzero)
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// Derives an independent sub-seed, e.g. one per dataset sample.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

/// Opens a named RNG stream under a master seed. Distinct tags give
/// statistically independent streams; the same (seed, tag) pair always
/// yields the same stream.
pub fn seed_stream(master: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(master ^ fnv1a(tag.as_bytes())))
}
