//! Sampling moments, distribution fit and closed forms of the log-normal
//! module, checked against statrs and numerical quadrature.

use lmd_core::lognormal::{density, kl_equal_sigma, sample_noise, LogNormalSpec, RngStream};
use statrs::distribution::{Continuous, ContinuousCDF, LogNormal};

const SIGMA: f64 = 0.125;
const N: usize = 1_000_000;

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standard error of the sample standard deviation, from the excess
/// kurtosis of LogN(0, σ²).
fn std_standard_error(sigma: f64, sd: f64, n: usize) -> f64 {
    let s2 = sigma * sigma;
    let excess = (4.0 * s2).exp() + 2.0 * (3.0 * s2).exp() + 3.0 * (2.0 * s2).exp() - 6.0;
    sd * ((excess + 2.0) / (4.0 * n as f64)).sqrt()
}

#[test]
fn moments_within_three_standard_errors() {
    let spec = LogNormalSpec::new(SIGMA, 1.0).unwrap();
    let s2 = SIGMA * SIGMA;
    let true_mean = (s2 / 2.0).exp();
    let true_sd = true_mean * (s2.exp() - 1.0).sqrt();
    for m in [0.01, 1.0, 100.0] {
        let eps = sample_noise(&spec, N, RngStream::new(42, (m * 100.0) as u64));
        let theta: Vec<f64> = eps.iter().map(|e| m * e).collect();
        let (mean, sd) = mean_std(&theta);
        let se_mean = m * true_sd / (N as f64).sqrt();
        assert!((mean - m * true_mean).abs() < 3.0 * se_mean, "m={m} mean {mean}");
        let se_sd = std_standard_error(SIGMA, m * true_sd, N);
        assert!((sd - m * true_sd).abs() < 3.0 * se_sd, "m={m} sd {sd}");
        // coefficient of variation is scale free
        let cv = (s2.exp() - 1.0).sqrt();
        assert!((sd / mean - cv).abs() < 3.0 * (se_sd / (m * true_mean) + cv * se_mean / (m * true_mean)));
    }
}

#[test]
fn coefficient_of_variation_is_exactly_scale_free_on_shared_draws() {
    let spec = LogNormalSpec::new(SIGMA, 1.0).unwrap();
    let eps = sample_noise(&spec, 10_000, RngStream::new(1, 0));
    let ratio = |m: f64| {
        let v: Vec<f64> = eps.iter().map(|e| m * e).collect();
        let (mean, sd) = mean_std(&v);
        sd / mean
    };
    let r1 = ratio(1.0);
    for m in [0.01, 100.0] {
        assert!((ratio(m) - r1).abs() < 1e-12 * r1);
    }
}

#[test]
fn kolmogorov_smirnov_against_statrs() {
    let spec = LogNormalSpec::new(SIGMA, 1.0).unwrap();
    let n = 100_000;
    let mut eps = sample_noise(&spec, n, RngStream::new(77, 5));
    eps.sort_by(f64::total_cmp);
    let dist = LogNormal::new(0.0, SIGMA).unwrap();
    let d = eps
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = dist.cdf(x);
            (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value
    assert!(d < 1.63 / (n as f64).sqrt(), "D = {d}");
}

#[test]
fn density_matches_statrs_and_integrates_to_one() {
    for (sigma, median) in [(0.125, 1.0), (0.3, 0.01), (1.0, 5.0)] {
        let spec = LogNormalSpec::new(sigma, 1.0).unwrap();
        let dist = LogNormal::new(f64::ln(median), sigma).unwrap();
        for k in 1..50 {
            let x = median * (sigma * (k as f64 / 5.0 - 5.0)).exp();
            let ours = density(&spec, median, x).unwrap();
            assert!((ours - dist.pdf(x)).abs() <= 1e-12 * dist.pdf(x).max(1e-300));
        }
        // Simpson on log-space: ∫ p(θ) dθ = ∫ p(e^u) e^u du
        let (a, b, n) = (f64::ln(median) - 12.0 * sigma, f64::ln(median) + 12.0 * sigma, 4000);
        let h = (b - a) / n as f64;
        let f = |u: f64| density(&spec, median, u.exp()).unwrap() * u.exp();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-10);
    }
}

#[test]
fn density_rejects_non_positive_theta() {
    let spec = LogNormalSpec::new(SIGMA, 1.0).unwrap();
    assert!(density(&spec, 1.0, 0.0).is_err());
    assert!(density(&spec, 1.0, -1.0).is_err());
}

#[test]
fn kl_matches_quadrature() {
    let sigma = 0.4;
    let (mu_q, mu_p) = (0.3, -0.5);
    let spec = LogNormalSpec::new(sigma, 1.0).unwrap();
    let (q_med, p_med) = (f64::exp(mu_q), f64::exp(mu_p));
    let (a, b, n) = (mu_q - 12.0 * sigma, mu_q + 12.0 * sigma, 4000);
    let h = (b - a) / n as f64;
    let f = |u: f64| {
        let t = u.exp();
        let q = density(&spec, q_med, t).unwrap();
        let p = density(&spec, p_med, t).unwrap();
        q * (q / p).ln() * t
    };
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    let closed = kl_equal_sigma(mu_q, mu_p, sigma).unwrap();
    assert!((s * h / 3.0 - closed).abs() < 1e-9, "{} vs {closed}", s * h / 3.0);
    assert_eq!(kl_equal_sigma(mu_p, mu_p, sigma).unwrap(), 0.0);
}
