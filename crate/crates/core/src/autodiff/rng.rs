//! Deterministic random number generation.
//!
//! xoshiro256++ seeded through splitmix64. The generator is tiny, fast, and
//! has a 256-bit state that serializes into checkpoints, which is what makes
//! bit-exact training resumption possible. Every sampling routine consumes a
//! fixed number of raw draws per output so streams stay aligned across runs.

use crate::error::{Error, Result};
use crate::Tensor;

#[derive(Clone, Debug)]
pub struct Rng {
    state: [u64; 4],
}

fn splitmix64(x: &mut u64) -> u64 {
    *x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let mut x = seed;
        let mut state = [0u64; 4];
        for s in &mut state {
            *s = splitmix64(&mut x);
        }
        // The all-zero state is a fixed point of xoshiro; splitmix64 cannot
        // realistically produce it, but guard anyway.
        if state == [0, 0, 0, 0] {
            state[0] = 1;
        }
        Rng { state }
    }

    /// Raw 256-bit state, for checkpointing.
    pub fn state(&self) -> [u64; 4] {
        self.state
    }

    pub fn from_state(state: [u64; 4]) -> Self {
        Rng { state }
    }

    /// xoshiro256++ step.
    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller. Each call consumes exactly two
    /// uniforms and returns the cosine branch; nothing is cached, so the
    /// stream position is a pure function of the call count.
    pub fn standard_normal(&mut self) -> f64 {
        // 1 - u lies in (0, 1], keeping the log argument positive.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        r * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn normal_tensor(&mut self, shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor::new(shape, self.normal_vec(numel)).expect("shape product matches generated length")
    }

    pub fn uniform_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }

    /// Index draw from unnormalized non-negative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> Result<usize> {
        if weights.is_empty() || weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::BadCategoricalWeights);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::BadCategoricalWeights);
        }
        let u = self.uniform() * total;
        let mut cum = 0.0;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                cum += w;
                last = i;
                if u < cum {
                    return Ok(i);
                }
            }
        }
        // Rounding can push the cumulative sum a hair below `total`; the
        // draw then belongs to the final positive-weight bucket.
        Ok(last)
    }

    /// Uniform draw from 0..n via widening multiply (slightly biased for
    /// astronomically large n, exact enough for index shuffling).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_diverge() {
        let mut a = Rng::new(1);
        let mut b = Rng::new(2);
        let same = (0..100).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_range_and_moments() {
        let mut rng = Rng::new(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "uniform mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(11);
        let n = 100_000;
        let xs = rng.normal_vec(n);
        let mean: f64 = xs.iter().sum::<f64>() / n as f64;
        let var: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "normal mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "normal variance {var}");
    }

    #[test]
    fn normal_stream_is_restorable_from_state() {
        let mut rng = Rng::new(3);
        rng.normal_vec(17);
        let saved = rng.state();
        let ahead = rng.normal_vec(10);
        let mut restored = Rng::from_state(saved);
        assert_eq!(restored.normal_vec(10), ahead);
    }

    #[test]
    fn categorical_degenerate_weight_always_wins() {
        let mut rng = Rng::new(5);
        for _ in 0..100 {
            assert_eq!(rng.categorical(&[1.0, 0.0, 0.0]).unwrap(), 0);
        }
    }

    #[test]
    fn categorical_frequencies_track_weights() {
        let mut rng = Rng::new(9);
        let w = [0.2, 0.5, 0.3];
        let mut counts = [0usize; 3];
        let n = 60_000;
        for _ in 0..n {
            counts[rng.categorical(&w).unwrap()] += 1;
        }
        for (c, &wi) in counts.iter().zip(&w) {
            let freq = *c as f64 / n as f64;
            assert!((freq - wi).abs() < 0.01, "freq {freq} vs weight {wi}");
        }
    }

    #[test]
    fn categorical_rejects_bad_weights() {
        let mut rng = Rng::new(1);
        assert!(rng.categorical(&[]).is_err());
        assert!(rng.categorical(&[0.0, 0.0]).is_err());
        assert!(rng.categorical(&[0.5, -0.1]).is_err());
        assert!(rng.categorical(&[f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(13);
        let mut xs: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(xs, (0..100).collect::<Vec<_>>());
    }
}
