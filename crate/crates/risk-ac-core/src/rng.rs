//! Counter-based splittable random stream.
//!
//! One root stream per run, split deterministically into independent
//! sub-streams (trajectories, perturbations, reward noise, test episodes).
//! Splitting depends only on the parent's seed and the label, never on how
//! many values the parent has drawn, so the stream tree is reproducible
//! bit-for-bit regardless of consumption order.

use alloc::vec::Vec;

const GAMMA64: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; bijective 64-bit mixer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic counter-seeded stream. `Clone` copies the full state.
#[derive(Clone, Debug)]
pub struct SplitRng {
    seed: u64,
    ctr: u64,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        SplitRng { seed: mix64(seed ^ GAMMA64), ctr: 0 }
    }

    /// Derive an independent child stream; depends only on (seed, label).
    pub fn split(&self, label: u64) -> Self {
        SplitRng {
            seed: mix64(self.seed ^ mix64(label.wrapping_mul(GAMMA64) ^ 0xA5A5_A5A5_A5A5_A5A5)),
            ctr: 0,
        }
    }

    /// The stream's identifying seed (stable under value draws).
    pub fn seed_value(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.ctr = self.ctr.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.ctr.wrapping_mul(GAMMA64)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Rademacher ±1.
    pub fn rademacher(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 { 1.0 } else { -1.0 }
    }

    /// Standard normal via Box-Muller (cosine branch; one value per call).
    pub fn gaussian(&mut self) -> f64 {
        // 1 - u keeps the argument of ln strictly positive.
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Poisson via Knuth's product method; fine for the small rates used here.
    pub fn poisson(&mut self, rate: f64) -> u64 {
        debug_assert!(rate >= 0.0);
        if rate <= 0.0 {
            return 0;
        }
        let threshold = libm::exp(-rate);
        let mut k = 0u64;
        let mut p = 1.0;
        loop {
            p *= self.next_f64();
            if p <= threshold {
                return k;
            }
            k += 1;
        }
    }

    /// Sample an index from a probability vector (entries sum to 1).
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    pub fn fill_rademacher(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rademacher()).collect()
    }

    pub fn fill_gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }
}
