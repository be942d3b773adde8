//! Seeded, stream-splittable randomness.
//!
//! Every stochastic component draws from an [`RngStream`]. The contract is
//! that the same `(seed, stream)` pair reproduces the same sample sequence,
//! and distinct stream ids give statistically independent streams. Streams
//! are single-owner: concurrent tasks each get their own stream (see
//! [`RngStream::fork`]).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Derive an independent child stream. The child's seed is drawn from
    /// this stream, so forking is deterministic given the parent state.
    pub fn fork(&mut self) -> RngStream {
        let s = self.inner.next_u64();
        RngStream::new(s, self.stream.wrapping_add(0x9e37_79b9_7f4a_7c15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Vector of iid `N(0, sd^2)` entries.
    pub fn normal_vec(&mut self, dim: usize, sd: f64) -> Vec<f64> {
        (0..dim).map(|_| sd * self.standard_normal()).collect()
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.gen_range(lo..hi)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.inner.gen_bool(p)
    }

    /// Uniform draw from the Euclidean ball of radius `r` in `dim` dimensions:
    /// normalized Gaussian direction scaled by `r * u^(1/dim)`.
    pub fn uniform_in_ball(&mut self, dim: usize, r: f64) -> Vec<f64> {
        let dir = self.normal_vec(dim, 1.0);
        let n = crate::linalg::norm(&dir);
        if n == 0.0 || r == 0.0 {
            return vec![0.0; dim];
        }
        let u: f64 = self.inner.gen_range(0.0..1.0f64);
        let radius = r * u.powf(1.0 / dim as f64);
        dir.iter().map(|d| d / n * radius).collect()
    }

    /// Geometric level `J >= 1` with `P(J = j) = 2^-j`, capped at 63 so the
    /// `2^J` correction weight stays representable. Mass beyond the cap is
    /// below 1e-18 and is absorbed by the MLMC truncation level anyway.
    pub fn geometric_level(&mut self) -> u32 {
        let mut j = 1;
        while j < 63 && self.inner.gen_bool(0.5) {
            j += 1;
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_and_stream_reproduce() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..32 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let va = a.normal_vec(8, 1.0);
        let vb = b.normal_vec(8, 1.0);
        assert_eq!(va, vb);
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..200 {
            let v = rng.uniform_in_ball(3, 0.5);
            assert!(crate::linalg::norm(&v) <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn geometric_law_rough_frequencies() {
        let mut rng = RngStream::new(11, 0);
        let n = 200_000;
        let mut c1 = 0usize;
        let mut c2 = 0usize;
        for _ in 0..n {
            match rng.geometric_level() {
                1 => c1 += 1,
                2 => c2 += 1,
                _ => {}
            }
        }
        assert!((c1 as f64 / n as f64 - 0.5).abs() < 0.01);
        assert!((c2 as f64 / n as f64 - 0.25).abs() < 0.01);
    }
}
