//! Seeded random numbers with a fixed, documented derivation.
//!
//! The generator is ChaCha20 (`rand_chacha::ChaCha20Rng`) keyed with the
//! 64-bit seed in little-endian order followed by 24 zero bytes. Derived
//! draws:
//!
//! - `uniform`: `(next_u64 >> 11) * 2^-53`, in `[0, 1)`;
//! - `sign`: `+1` when the lowest bit of `next_u64` is set, else `-1`;
//! - `normal`: Box-Muller, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)` from two
//!   consecutive uniforms (the sine branch is discarded);
//! - `below(n)`: `(next_u64 * n) >> 64`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        Self {
            inner: ChaCha20Rng::from_seed(key),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates, drawing `below(i + 1)` for `i = len - 1, ..., 1`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
