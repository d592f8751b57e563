//! Log-normal noise: sampling, density and the equal-variance KL divergence.
//!
//! Normal variates come from `rand_distr::StandardNormal` (ziggurat) driven
//! by ChaCha8 keyed on the 64-bit seed, with the 64-bit ChaCha stream
//! selector set to the stream id. A `(seed, stream)` pair is therefore a
//! reproducible, independent sequence that can be replayed on any thread.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise scale σ and prior median m_r of one parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalSpec {
    sigma: f64,
    prior_median: f64,
}

impl LogNormalSpec {
    pub fn new(sigma: f64, prior_median: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
        }
        if !(prior_median > 0.0 && prior_median.is_finite()) {
            return Err(Error::InvalidArgument(format!("prior median must be > 0, got {prior_median}")));
        }
        Ok(Self { sigma, prior_median })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn prior_median(&self) -> f64 {
        self.prior_median
    }

    /// E[ε] for ε ~ LogN(0, σ²).
    pub fn mean_factor(&self) -> f64 {
        mean_factor(self.sigma)
    }
}

/// `exp(σ²/2)`, the mean of LogN(0, σ²).
pub fn mean_factor(sigma: f64) -> f64 {
    (0.5 * sigma * sigma).exp()
}

/// Identifies one reproducible random sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Seed for step `step` of a run seeded with `run_seed` (splitmix64).
    pub fn derive_seed(run_seed: u64, step: u64) -> u64 {
        let mut z = run_seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Draws `exp(σ z)` with `z` standard normal.
pub fn draw<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 1.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    (sigma * z).exp()
}

/// `n` samples of ε ~ LogN(0, σ²).
pub fn sample_noise(spec: &LogNormalSpec, n: usize, stream: RngStream) -> Vec<f64> {
    let mut rng = stream.generator();
    (0..n).map(|_| draw(&mut rng, spec.sigma)).collect()
}

/// Density of LogN(log `median`, σ²) at `theta`.
pub fn density(spec: &LogNormalSpec, median: f64, theta: f64) -> Result<f64> {
    if theta.is_nan() || theta <= 0.0 {
        return Err(Error::InvalidArgument(format!("density needs theta > 0, got {theta}")));
    }
    if spec.sigma.is_nan() || spec.sigma <= 0.0 {
        return Err(Error::InvalidArgument("density needs sigma > 0".into()));
    }
    if median.is_nan() || median <= 0.0 {
        return Err(Error::InvalidArgument(format!("median must be > 0, got {median}")));
    }
    let s = spec.sigma;
    let d = theta.ln() - median.ln();
    Ok((-d * d / (2.0 * s * s)).exp() / (theta * s * (2.0 * std::f64::consts::PI).sqrt()))
}

/// KL(LogN(μ_q, σ²) ‖ LogN(μ_p, σ²)) = (μ_q − μ_p)² / (2σ²).
pub fn kl_equal_sigma(mu_q: f64, mu_p: f64, sigma: f64) -> Result<f64> {
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!("kl needs sigma > 0, got {sigma}")));
    }
    let d = mu_q - mu_p;
    Ok(d * d / (2.0 * sigma * sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_gives_exact_ones() {
        let spec = LogNormalSpec::new(0.0, 1.0).unwrap();
        assert!(sample_noise(&spec, 1000, RngStream::new(3, 0)).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn same_stream_replays_and_distinct_streams_differ() {
        let spec = LogNormalSpec::new(0.125, 1.0).unwrap();
        let a = sample_noise(&spec, 64, RngStream::new(7, 2));
        let b = sample_noise(&spec, 64, RngStream::new(7, 2));
        let c = sample_noise(&spec, 64, RngStream::new(7, 3));
        let d = sample_noise(&spec, 64, RngStream::new(8, 2));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn density_at_unit_median() {
        let spec = LogNormalSpec::new(1.0, 1.0).unwrap();
        let v = density(&spec, 1.0, 1.0).unwrap();
        assert!((v - 0.398_942_280_401_432_7).abs() < 1e-15);
    }

    #[test]
    fn density_rejects_nonpositive_theta() {
        let spec = LogNormalSpec::new(1.0, 1.0).unwrap();
        assert!(density(&spec, 1.0, 0.0).is_err());
        assert!(density(&spec, 1.0, -1.0).is_err());
    }

    #[test]
    fn density_mode_is_a_local_max() {
        // mode of LogN(mu, s^2) is exp(mu - s^2)
        let spec = LogNormalSpec::new(0.4, 1.0).unwrap();
        let mu: f64 = 0.3;
        let mode = (mu - 0.16f64).exp();
        let h = 1e-4;
        let f = |x| density(&spec, mu.exp(), x).unwrap();
        assert!(f(mode + h) - f(mode) < 0.0);
        assert!(f(mode) - f(mode - h) > 0.0);
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_equal_sigma(0.3, 0.3, 0.2).unwrap(), 0.0);
        let s = 0.125f64;
        let kl = kl_equal_sigma(0.0, 0.01f64.ln() + s * s / 2.0, s).unwrap();
        assert!((kl - 676.34).abs() < 0.01, "{kl}");
        assert_eq!(kl_equal_sigma(1.0, -2.0, 0.5).unwrap(), kl_equal_sigma(-2.0, 1.0, 0.5).unwrap());
        assert!(kl_equal_sigma(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(LogNormalSpec::new(-0.1, 1.0).is_err());
        assert!(LogNormalSpec::new(0.1, 0.0).is_err());
    }
}
