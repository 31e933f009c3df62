//! Scalar special functions: log-gamma, digamma, the regularized incomplete
//! beta function, and the standard normal and Student t distributions.
//!
//! Everything here is a pure function of its arguments. Degrees of freedom
//! need not be integers.

use crate::error::{Error, Result};
use std::f64::consts::{LN_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Switch point above which Stirling's series is used for gamma ratios.
const STIRLING_MIN: f64 = 10.0;

const BETA_CF_MAX_ITER: usize = 20_000;
const BETA_CF_EPS: f64 = 1e-16;

/// `ln Γ(x)` for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(libm::lgamma(x))
}

/// Remainder of Stirling's series, `ln Γ(z) - [(z - 1/2) ln z - z + ln √(2π)]`.
fn stirling_tail(z: f64) -> f64 {
    let r = 1.0 / z;
    let r2 = r * r;
    r * (1.0 / 12.0
        + r2 * (-1.0 / 360.0
            + r2 * (1.0 / 1260.0
                + r2 * (-1.0 / 1680.0
                    + r2 * (1.0 / 1188.0 + r2 * (-691.0 / 360_360.0 + r2 / 156.0))))))
}

/// `ln Γ(a + h) - ln Γ(a)` without the cancellation a direct difference
/// suffers for large `a`.
pub fn log_gamma_ratio(a: f64, h: f64) -> f64 {
    let b = a + h;
    if a >= STIRLING_MIN && b >= STIRLING_MIN {
        (a - 0.5) * (h / a).ln_1p() + h * b.ln() - h + stirling_tail(b) - stirling_tail(a)
    } else {
        libm::lgamma(b) - libm::lgamma(a)
    }
}

/// `ln B(a, b)`.
pub fn log_beta(a: f64, b: f64) -> f64 {
    let (small, big) = if a < b { (a, b) } else { (b, a) };
    if big >= STIRLING_MIN {
        libm::lgamma(small) - log_gamma_ratio(big, small)
    } else {
        libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
    }
}

/// Digamma function `ψ(x)` for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    Ok(digamma_unchecked(x))
}

pub(crate) fn digamma_unchecked(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    let series = r2
        * (1.0 / 12.0
            - r2 * (1.0 / 120.0
                - r2 * (1.0 / 252.0
                    - r2 * (1.0 / 240.0
                        - r2 * (1.0 / 132.0 - r2 * (691.0 / 32_760.0 - r2 / 12.0))))));
    acc + x.ln() - 0.5 * r - series
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_EPS {
            break;
        }
    }
    h
}

/// Natural log of the regularized incomplete beta `I_x(a, b)` and of its
/// complement `1 - I_x(a, b)`. `y` must equal `1 - x`; passing it separately
/// keeps full precision when `x` is close to one.
pub fn log_beta_inc_pair(a: f64, b: f64, x: f64, y: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (f64::NEG_INFINITY, 0.0);
    }
    if y <= 0.0 {
        return (0.0, f64::NEG_INFINITY);
    }
    let log_front = a * x.ln() + b * y.ln() - log_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        let lower = log_front + beta_cf(a, b, x).ln() - a.ln();
        (lower, (-lower.exp()).ln_1p())
    } else {
        let upper = log_front + beta_cf(b, a, y).ln() - b.ln();
        ((-upper.exp()).ln_1p(), upper)
    }
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    log_beta_inc_pair(a, b, x, 1.0 - x).0.exp()
}

fn check_nu(nu: f64) -> Result<()> {
    if nu > 0.0 && !nu.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "degrees of freedom must be positive, got {nu}"
        )))
    }
}

/// Log density of the standard Student t distribution.
pub fn student_t_logpdf(x: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(student_t_logpdf_unchecked(x, nu))
}

pub(crate) fn student_t_logpdf_unchecked(x: f64, nu: f64) -> f64 {
    log_gamma_ratio(0.5 * nu, 0.5) - 0.5 * (nu.ln() + LN_PI) - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Density of the standard Student t distribution with `nu` degrees of freedom.
pub fn student_t_pdf(x: f64, nu: f64) -> Result<f64> {
    student_t_logpdf(x, nu).map(f64::exp)
}

/// Natural log of `(T_ν(x), 1 - T_ν(x))`.
pub(crate) fn student_t_log_cdf_pair(x: f64, nu: f64) -> (f64, f64) {
    if x.is_nan() {
        return (f64::NAN, f64::NAN);
    }
    if x == 0.0 {
        return (-LN_2, -LN_2);
    }
    if x.is_infinite() {
        return if x > 0.0 {
            (0.0, f64::NEG_INFINITY)
        } else {
            (f64::NEG_INFINITY, 0.0)
        };
    }
    let x2 = x * x;
    let denom = nu + x2;
    // Tail mass beyond |x| is I_z(ν/2, 1/2) with z = ν / (ν + x²).
    let (log_tail2, log_body) = log_beta_inc_pair(0.5 * nu, 0.5, nu / denom, x2 / denom);
    let log_tail = log_tail2 - LN_2;
    // 1 - tail = 1 - I/2 = (1 + (1 - I)) / 2
    let log_rest = (log_body.exp()).ln_1p() - LN_2;
    if x < 0.0 {
        (log_tail, log_rest)
    } else {
        (log_rest, log_tail)
    }
}

/// Natural log of the Student t CDF, accurate deep into the lower tail.
pub fn student_t_log_cdf(x: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(student_t_log_cdf_pair(x, nu).0)
}

/// Cumulative distribution function `T_ν(x)` of the standard Student t.
pub fn student_t_cdf(x: f64, nu: f64) -> Result<f64> {
    check_nu(nu)?;
    Ok(student_t_log_cdf_pair(x, nu).0.exp())
}

/// Standard normal density and distribution function `(φ(x), Φ(x))`.
pub fn normal_pdf_cdf(x: f64) -> (f64, f64) {
    let pdf = (-0.5 * x * x - LN_SQRT_2PI).exp();
    let cdf = 0.5 * libm::erfc(-x / std::f64::consts::SQRT_2);
    (pdf, cdf)
}

/// `ln φ(x)`.
pub fn normal_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// `ln Φ(x)`, using the Mills ratio asymptotic expansion where `Φ` underflows.
pub fn normal_log_cdf(x: f64) -> f64 {
    if x > -30.0 {
        (0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 * (1.0 - 3.0 * z2 * (1.0 - 5.0 * z2));
        normal_logpdf(x) - (-x).ln() + series.ln()
    }
}

/// `ξ(ν) = √(ν/π) Γ((ν-1)/2) / Γ(ν/2)`, defined for `ν > 1`.
pub fn xi(nu: f64) -> Result<f64> {
    if !(nu > 1.0) {
        return Err(Error::UndefinedMoment(format!(
            "xi(nu) requires nu > 1, got {nu}"
        )));
    }
    let log_ratio = -log_gamma_ratio(0.5 * (nu - 1.0), 0.5);
    Ok((0.5 * (nu / PI).ln() + log_ratio).exp())
}
