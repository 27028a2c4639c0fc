//! Seeded, splittable random substreams.
//!
//! Every stream is addressed by `(master_seed, stream_index)`. The engines give
//! Monte Carlo iteration `i` its own substream `i`, so the draws an iteration sees
//! never depend on how the iterations are split across worker threads.
//!
//! Generation is backed by ChaCha8 with the master seed as key material and the
//! stream index as the ChaCha stream (nonce). The `counter` field counts 64-bit
//! words consumed so far; a stream can be rebuilt from its three fields.
//!
//! Counter advance per call:
//!
//! | call               | words |
//! |--------------------|-------|
//! | `next_u64`         | 1     |
//! | `next_f64`         | 1     |
//! | `sample_uniform`   | 1     |
//! | `sample_gaussian`  | 2     |
//!
//! Gaussian draws use the cosine branch of the Box–Muller transform; the sine
//! partner is discarded so every Gaussian draw costs exactly two words, including
//! the degenerate `variance == 0` case.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Words consumed by one uniform draw.
pub const UNIFORM_WORDS: u64 = 1;
/// Words consumed by one Gaussian draw.
pub const GAUSSIAN_WORDS: u64 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("variance must be non-negative and finite, got {0}")]
    BadVariance(f64),
    #[error("uniform bounds must satisfy lower < upper, got [{lower}, {upper})")]
    BadBounds { lower: f64, upper: f64 },
    #[error("distribution parameter is not finite")]
    NonFinite,
}

/// A counter-addressed random stream.
#[derive(Clone, Debug)]
pub struct RandomStream {
    master_seed: u64,
    stream_index: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Number of 64-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Rebuild a stream positioned at `counter` words into substream
    /// `(master_seed, stream_index)`.
    pub fn at(master_seed: u64, stream_index: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream_index);
        // word_pos counts 32-bit words
        rng.set_word_pos(u128::from(counter) * 2);
        RandomStream {
            master_seed,
            stream_index,
            counter,
            rng,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        self.rng.next_u64()
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Stream whose sequence is a pure function of `(master_seed, stream_index)`.
pub fn derive_substream(master_seed: u64, stream_index: u64) -> RandomStream {
    RandomStream::at(master_seed, stream_index, 0)
}

/// Draw from N(mu, variance). `variance == 0` returns `mu` exactly but still
/// advances the stream by [`GAUSSIAN_WORDS`].
pub fn sample_gaussian(
    stream: &mut RandomStream,
    mu: f64,
    variance: f64,
) -> Result<f64, DistributionError> {
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(DistributionError::BadVariance(variance));
    }
    if !mu.is_finite() {
        return Err(DistributionError::NonFinite);
    }
    let u1 = 1.0 - stream.next_f64(); // (0, 1]
    let u2 = stream.next_f64();
    if variance == 0.0 {
        return Ok(mu);
    }
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    Ok(mu + variance.sqrt() * z)
}

/// Draw from U[lower, upper).
pub fn sample_uniform(
    stream: &mut RandomStream,
    lower: f64,
    upper: f64,
) -> Result<f64, DistributionError> {
    if !lower.is_finite() || !upper.is_finite() {
        return Err(DistributionError::NonFinite);
    }
    if !(lower < upper) {
        return Err(DistributionError::BadBounds { lower, upper });
    }
    let u = stream.next_f64();
    let x = lower + (upper - lower) * u;
    // rounding can land exactly on the upper bound
    Ok(if x < upper { x } else { upper.next_down() })
}

/// Scalar state-of-knowledge distribution for a Type B quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Distribution {
    Gaussian { mean: f64, variance: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl Distribution {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, DistributionError> {
        let d = Distribution::Gaussian { mean, variance };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self, DistributionError> {
        let d = Distribution::Uniform { lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DistributionError> {
        match *self {
            Distribution::Gaussian { mean, variance } => {
                if !mean.is_finite() {
                    return Err(DistributionError::NonFinite);
                }
                if !(variance > 0.0) || !variance.is_finite() {
                    return Err(DistributionError::BadVariance(variance));
                }
            }
            Distribution::Uniform { lower, upper } => {
                if !lower.is_finite() || !upper.is_finite() {
                    return Err(DistributionError::NonFinite);
                }
                if !(lower < upper) {
                    return Err(DistributionError::BadBounds { lower, upper });
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Result<f64, DistributionError> {
        match *self {
            Distribution::Gaussian { mean, variance } => sample_gaussian(stream, mean, variance),
            Distribution::Uniform { lower, upper } => sample_uniform(stream, lower, upper),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::Gaussian { mean, .. } => mean,
            Distribution::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Distribution::Gaussian { variance, .. } => variance,
            Distribution::Uniform { lower, upper } => (upper - lower).powi(2) / 12.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn same_substream_same_draws() {
        let mut a = derive_substream(42, 0);
        let mut b = derive_substream(42, 0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_index_different_draws() {
        let mut a = derive_substream(42, 0);
        let mut b = derive_substream(42, 1);
        let xs: Vec<u64> = (0..100).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..100).map(|_| b.next_u64()).collect();
        assert!(xs.iter().zip(&ys).all(|(x, y)| x != y));
    }

    #[test]
    fn ten_streams_have_centered_uniform_means() {
        for k in 0..10 {
            let mut s = derive_substream(42, k);
            let m = (0..100_000).map(|_| s.next_f64()).sum::<f64>() / 1e5;
            assert!((m - 0.5).abs() < 0.005, "stream {k}: {m}");
        }
    }

    #[test]
    fn adjacent_streams_are_uncorrelated() {
        let n = 100_000;
        for k in 0..5u64 {
            let mut a = derive_substream(7, k);
            let mut b = derive_substream(7, k + 1);
            let xs: Vec<f64> = (0..n).map(|_| a.next_f64()).collect();
            let ys: Vec<f64> = (0..n).map(|_| b.next_f64()).collect();
            let (mx, vx) = mean_var(&xs);
            let (my, vy) = mean_var(&ys);
            let cov = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>()
                / (n as f64 - 1.0);
            let r = cov / (vx * vy).sqrt();
            // 5 / sqrt(n)
            assert!(r.abs() < 5.0 / (n as f64).sqrt(), "r = {r}");
        }
    }

    #[test]
    fn rebuild_from_fields_continues_sequence() {
        let mut s = derive_substream(3, 9);
        for _ in 0..17 {
            s.next_u64();
        }
        let mut t = RandomStream::at(s.master_seed(), s.stream_index(), s.counter());
        for _ in 0..20 {
            assert_eq!(s.next_u64(), t.next_u64());
        }
    }

    #[test]
    fn counter_advance_is_fixed() {
        let mut s = derive_substream(1, 1);
        sample_uniform(&mut s, 0.0, 1.0).unwrap();
        assert_eq!(s.counter(), UNIFORM_WORDS);
        sample_gaussian(&mut s, 0.0, 1.0).unwrap();
        assert_eq!(s.counter(), UNIFORM_WORDS + GAUSSIAN_WORDS);
        sample_gaussian(&mut s, 0.0, 0.0).unwrap();
        assert_eq!(s.counter(), UNIFORM_WORDS + 2 * GAUSSIAN_WORDS);
    }

    #[test]
    fn degenerate_gaussian_returns_mu() {
        let mut s = derive_substream(0, 0);
        assert_eq!(sample_gaussian(&mut s, 3.5, 0.0).unwrap(), 3.5);
    }

    #[test]
    fn negative_variance_is_rejected() {
        let mut s = derive_substream(0, 0);
        assert!(matches!(
            sample_gaussian(&mut s, 0.0, -1.0),
            Err(DistributionError::BadVariance(_))
        ));
    }

    #[test]
    fn standard_normal_moments() {
        let mut s = derive_substream(11, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_gaussian(&mut s, 0.0, 1.0).unwrap())
            .collect();
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.005, "{m}");
        assert!((v - 1.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn gaussian_central_95_fraction() {
        let mut s = derive_substream(12, 0);
        let n = 1_000_000;
        let inside = (0..n)
            .map(|_| sample_gaussian(&mut s, 50.0, 1.0).unwrap())
            .filter(|x| (48.04..=51.96).contains(x))
            .count();
        let frac = inside as f64 / n as f64;
        // Phi(1.96) - Phi(-1.96)
        assert!((frac - 0.950_004).abs() < 0.002, "{frac}");
    }

    #[test]
    fn uniform_support_and_mean() {
        let mut s = derive_substream(13, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_uniform(&mut s, 5.0, 10.0).unwrap())
            .collect();
        assert!(xs.iter().all(|&x| (5.0..10.0).contains(&x)));
        let (m, _) = mean_var(&xs);
        assert!((m - 7.5).abs() < 0.01, "{m}");
    }

    #[test]
    fn uniform_variance() {
        let mut s = derive_substream(14, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| sample_uniform(&mut s, 1.1, 1.3).unwrap())
            .collect();
        let (_, v) = mean_var(&xs);
        let expected = 0.2f64.powi(2) / 12.0;
        assert!((v / expected - 1.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn uniform_bad_bounds() {
        let mut s = derive_substream(0, 0);
        assert!(sample_uniform(&mut s, 2.0, 2.0).is_err());
        assert!(sample_uniform(&mut s, 3.0, 2.0).is_err());
        assert!(Distribution::uniform(1.0, 0.0).is_err());
        assert!(Distribution::gaussian(0.0, 0.0).is_err());
    }
}
