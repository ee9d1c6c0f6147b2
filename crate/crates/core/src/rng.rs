//! Portable seeded randomness.
//!
//! Every random quantity in the crate comes from xoshiro256++ seeded through
//! SplitMix64 (`Xoshiro256PlusPlus::seed_from_u64`). Floating-point draws are
//! derived from raw 64-bit outputs with the fixed mapping
//!
//! ```text
//! unit = ((next_u64 >> 11) + 0.5) * 2^-53      // open interval (0, 1)
//! uniform(lo, hi) = lo + (hi - lo) * unit
//! ```
//!
//! so a reimplementation of these two published generators reproduces every
//! graph and parameter draw bit for bit.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function (finalizer).
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed: `mix(parent + GAMMA * (index + 1))`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    splitmix64_mix(parent.wrapping_add(GOLDEN_GAMMA.wrapping_mul(index.wrapping_add(1))))
}

/// Seeded stream with the documented float mapping.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: Xoshiro256PlusPlus,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on the open interval (0, 1).
    pub fn unit(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on the open interval (lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn bernoulli(&mut self, prob: f64) -> bool {
        self.unit() < prob
    }
}
