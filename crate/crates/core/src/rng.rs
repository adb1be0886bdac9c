//! Portable seeded random numbers.
//!
//! The generator is PCG-XSL-RR 128/64 (`Pcg64`) seeded through
//! `SeedableRng::seed_from_u64` (PCG32 key expansion). Derived variates are
//! defined here rather than delegated to a distribution crate so any other
//! implementation can reproduce the exact sequence:
//!
//! * `uniform()`: `(next_u64() >> 11) · 2⁻⁵³`, in `[0, 1)`;
//! * `normal()`: Box–Muller cosine branch, `√(−2 ln(1 − u₁)) · cos(2π u₂)`,
//!   consuming two uniforms per sample.

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;

#[derive(Clone, Debug)]
pub struct PortableRng {
    inner: Pcg64,
}

impl PortableRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: Pcg64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[lo, hi]` (inclusive), `floor(u · span)`.
    pub fn int_range(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = (hi - lo + 1) as f64;
        lo + ((self.uniform() * span) as u64).min(hi - lo)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Seed of the `index`-th item derived from a base seed (golden-ratio stride).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}
