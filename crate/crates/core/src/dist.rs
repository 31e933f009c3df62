//! Skew-normal and skew-t densities and samplers.

use crate::error::{Error, Result};
use crate::specfun::{normal_log_cdf, normal_logpdf, student_t_log_cdf_pair, student_t_logpdf_unchecked};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use std::f64::consts::LN_2;

/// Parameters of a univariate skew-t distribution `ST(μ, σ², λ, ν)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewTParams {
    pub mu: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub nu: f64,
}

impl SkewTParams {
    pub fn new(mu: f64, sigma2: f64, lambda: f64, nu: f64) -> Result<Self> {
        let p = SkewTParams {
            mu,
            sigma2,
            lambda,
            nu,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !self.lambda.is_finite() {
            return Err(Error::Domain(format!("non-finite skew-t parameters {self:?}")));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.nu > 0.0) {
            return Err(Error::Domain(format!("nu must be positive, got {}", self.nu)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// `δ = λ / √(1 + λ²)`.
    pub fn delta(&self) -> f64 {
        delta_from_lambda(self.lambda)
    }
}

pub fn delta_from_lambda(lambda: f64) -> f64 {
    lambda / lambda.mul_add(lambda, 1.0).sqrt()
}

/// Inverse of [`delta_from_lambda`], `λ = δ / √(1 - δ²)`.
pub fn lambda_from_delta(delta: f64) -> f64 {
    delta / ((1.0 - delta) * (1.0 + delta)).sqrt()
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")))
    }
}

/// Log density of `N(μ, σ²)` at `y`.
pub fn normal_logpdf_scaled(y: f64, mu: f64, sigma2: f64) -> f64 {
    let sigma = sigma2.sqrt();
    normal_logpdf((y - mu) / sigma) - sigma.ln()
}

pub fn skew_normal_logpdf(y: f64, mu: f64, sigma2: f64, lambda: f64) -> Result<f64> {
    check_sigma2(sigma2)?;
    let sigma = sigma2.sqrt();
    let d = (y - mu) / sigma;
    Ok(LN_2 - sigma.ln() + normal_logpdf(d) + normal_log_cdf(lambda * d))
}

/// Skew-normal density `(2/σ) φ((y-μ)/σ) Φ(λ (y-μ)/σ)`.
pub fn skew_normal_pdf(y: f64, mu: f64, sigma2: f64, lambda: f64) -> Result<f64> {
    skew_normal_logpdf(y, mu, sigma2, lambda).map(f64::exp)
}

/// Log of the skew-t density.
pub fn skew_t_logpdf(y: f64, p: &SkewTParams) -> Result<f64> {
    p.validate()?;
    Ok(skew_t_logpdf_unchecked(y, p.mu, p.sigma2, p.lambda, p.nu))
}

pub(crate) fn skew_t_logpdf_unchecked(y: f64, mu: f64, sigma2: f64, lambda: f64, nu: f64) -> f64 {
    let sigma = sigma2.sqrt();
    let d = (y - mu) / sigma;
    let arg = lambda * d * ((nu + 1.0) / (nu + d * d)).sqrt();
    LN_2 - sigma.ln() + student_t_logpdf_unchecked(d, nu) + student_t_log_cdf_pair(arg, nu + 1.0).0
}

/// Skew-t density `(2/σ) t_ν(d) T_{ν+1}(λ d √((ν+1)/(ν+d²)))`, `d = (y-μ)/σ`.
pub fn skew_t_pdf(y: f64, p: &SkewTParams) -> Result<f64> {
    skew_t_logpdf(y, p).map(f64::exp)
}

/// One draw from `ST(μ, σ², λ, ν)` through `Y = μ + σ U / √W` with
/// `U ~ SN(λ)` and `W ~ Gamma(ν/2, rate ν/2)`.
pub fn draw_skew_t<R: Rng + ?Sized>(rng: &mut R, p: &SkewTParams) -> f64 {
    let delta = p.delta();
    let u0: f64 = StandardNormal.sample(rng);
    let e: f64 = StandardNormal.sample(rng);
    let u = delta * u0.abs() + ((1.0 - delta) * (1.0 + delta)).sqrt() * e;
    let w = draw_gamma(rng, 0.5 * p.nu, 0.5 * p.nu);
    p.mu + p.sigma() * u / w.sqrt()
}

/// Gamma draw with the given shape and rate.
pub fn draw_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("shape and rate are validated positive")
        .sample(rng)
}

/// `n` i.i.d. skew-t draws, reproducible for a given `seed`.
pub fn sample_skew_t(p: &SkewTParams, n: usize, seed: u64) -> Result<Vec<f64>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| draw_skew_t(&mut rng, p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{normal_pdf_cdf, student_t_pdf};

    #[test]
    fn skew_normal_reduces_to_normal() {
        for &y in &[-2.0, -0.3, 0.0, 1.7] {
            let sn = skew_normal_pdf(y, 0.4, 2.0, 0.0).unwrap();
            let n = normal_logpdf_scaled(y, 0.4, 2.0).exp();
            assert!((sn - n).abs() < 1e-15);
        }
        let at_mode = skew_normal_pdf(0.0, 0.0, 1.0, 3.0).unwrap();
        assert!((at_mode - normal_pdf_cdf(0.0).0).abs() < 1e-15);
    }

    #[test]
    fn skew_t_symmetric_case_is_scaled_t() {
        let p = SkewTParams::new(1.0, 4.0, 0.0, 3.5).unwrap();
        for &y in &[-5.0, 0.0, 1.0, 2.2, 30.0] {
            let expected = student_t_pdf((y - 1.0) / 2.0, 3.5).unwrap() / 2.0;
            assert!((skew_t_pdf(y, &p).unwrap() - expected).abs() < 1e-15);
        }
        let q = SkewTParams::new(1.0, 4.0, 7.0, 3.5).unwrap();
        let at_mu = student_t_pdf(0.0, 3.5).unwrap() / 2.0;
        assert!((skew_t_pdf(1.0, &q).unwrap() - at_mu).abs() < 1e-15);
    }

    #[test]
    fn skew_flip() {
        let p = SkewTParams::new(0.5, 0.3, 2.5, 4.0).unwrap();
        let q = SkewTParams { lambda: -2.5, ..p };
        for &u in &[0.0, 0.1, 0.9, 3.0, 40.0] {
            let a = skew_t_pdf(0.5 + u, &p).unwrap();
            let b = skew_t_pdf(0.5 - u, &q).unwrap();
            assert!((a - b).abs() <= 1e-15 * a.max(1e-300));
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(SkewTParams::new(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(SkewTParams::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(SkewTParams::new(f64::NAN, 1.0, 1.0, 1.0).is_err());
        assert!(skew_normal_pdf(0.0, 0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn delta_lambda_round_trip() {
        for &l in &[-10.0, -1.0, 0.0, 0.3, 3.0, 93.0] {
            let d = delta_from_lambda(l);
            assert!(d.abs() < 1.0);
            assert!((lambda_from_delta(d) - l).abs() < 1e-12 * l.abs().max(1.0));
        }
    }

    #[test]
    fn sampler_is_deterministic() {
        let p = SkewTParams::new(0.0, 1.0, 3.0, 5.0).unwrap();
        assert_eq!(sample_skew_t(&p, 100, 7).unwrap(), sample_skew_t(&p, 100, 7).unwrap());
        assert_ne!(sample_skew_t(&p, 100, 7).unwrap(), sample_skew_t(&p, 100, 8).unwrap());
    }

    #[test]
    fn near_normal_sample_moments() {
        let p = SkewTParams::new(0.0, 1.0, 0.0, 1e6).unwrap();
        let n = 100_000;
        let s = sample_skew_t(&p, n, 11).unwrap();
        let mean = s.iter().sum::<f64>() / n as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.05);
    }
}
