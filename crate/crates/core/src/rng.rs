//! Seeded random source shared by every stochastic routine.
//!
//! The generator is ChaCha8 from `rand_chacha`, keyed from a 64-bit seed via
//! `SeedableRng::seed_from_u64`. Its output is platform independent, so a
//! seed fully determines weights, datasets and shuffles.

use rand::distr::{Distribution, Uniform};
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALGORITHM: &str = "ChaCha8 (rand_chacha, seed_from_u64)";

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream keyed by `(seed, stream)`. Used to give each
    /// parameter group its own draws so adding a tensor does not shift others.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        ALGORITHM
    }

    /// Uniform draw in `[-bound, bound)`; returns 0 when `bound == 0`.
    pub fn uniform(&mut self, bound: f64) -> f64 {
        if bound == 0.0 {
            return 0.0;
        }
        Uniform::new(-bound, bound)
            .expect("finite positive bound")
            .sample(&mut self.inner)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random()
    }

    /// Standard normal draw (Box-Muller on two uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1: f64 = 1.0 - self.inner.random::<f64>();
        let u2: f64 = self.inner.random::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.random::<f64>() < p
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
