//! E-step: posterior memberships and the conditional moments of the latent
//! scale `W` and skewing variable `U` given each observation and component.

use crate::error::{Error, Result};
use crate::model::{row_log_sum_exp, Dataset, Family, ModelParams};
use crate::specfun::{digamma_unchecked, student_t_log_cdf_pair, student_t_logpdf_unchecked};
use nalgebra::DMatrix;
use std::f64::consts::PI;

/// Conditional expectations required by the Q-function, one entry per
/// observation (rows) and component (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct EStepMoments {
    /// Posterior membership probabilities.
    pub tau: DMatrix<f64>,
    /// `E[W | y, z]`.
    pub w: DMatrix<f64>,
    /// `E[W |U| | y, z]`.
    pub e1: DMatrix<f64>,
    /// `E[W U² | y, z]`.
    pub e2: DMatrix<f64>,
    /// `E[log W | y, z]`, one-step-late approximation.
    pub e3: DMatrix<f64>,
    /// Standardized residuals `(y - βᵀx) / σ`.
    pub d: DMatrix<f64>,
    /// `λ d √((ν+1)/(ν+d²))`.
    pub m: DMatrix<f64>,
}

impl EStepMoments {
    pub fn n(&self) -> usize {
        self.tau.nrows()
    }

    pub fn k(&self) -> usize {
        self.tau.ncols()
    }

    /// Moments of a normal-experts model: `w ≡ 1`, all other latent moments zero.
    pub fn normal(tau: DMatrix<f64>, d: DMatrix<f64>) -> Self {
        let (n, k) = tau.shape();
        EStepMoments {
            tau,
            w: DMatrix::from_element(n, k, 1.0),
            e1: DMatrix::zeros(n, k),
            e2: DMatrix::zeros(n, k),
            e3: DMatrix::zeros(n, k),
            d,
            m: DMatrix::zeros(n, k),
        }
    }
}

/// Normalizes joint log terms into responsibilities; returns them together with
/// the per-row log mixture density.
pub(crate) fn normalize_log_terms(terms: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let lse = row_log_sum_exp(terms);
    let mut tau = terms.clone();
    for (i, &l) in lse.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::ZeroDensity { row: i });
        }
        let mut total = 0.0;
        for k in 0..tau.ncols() {
            let v = (terms[(i, k)] - l).exp();
            tau[(i, k)] = v;
            total += v;
        }
        for k in 0..tau.ncols() {
            tau[(i, k)] /= total;
        }
    }
    Ok((tau, lse))
}

/// `τ_ik = π_k f_k(y_i) / Σ_l π_l f_l(y_i)`, evaluated in log space.
pub fn posterior_tau(data: &Dataset, psi: &ModelParams) -> Result<DMatrix<f64>> {
    let terms = psi.joint_log_terms(data)?;
    Ok(normalize_log_terms(&terms)?.0)
}

struct PointMoments {
    w: f64,
    e1: f64,
    e2: f64,
    e3: f64,
    d: f64,
    m: f64,
}

/// Latent moments for one observation under one skew-t expert.
fn point_moments(resid: f64, sigma2: f64, lambda: f64, nu: f64) -> PointMoments {
    let sigma = sigma2.sqrt();
    let delta = lambda / lambda.mul_add(lambda, 1.0).sqrt();
    let one_m_d2 = 1.0 / lambda.mul_add(lambda, 1.0);
    let d = resid / sigma;
    let d2 = (d * d).max(0.0);
    let ratio = (nu + 1.0) / (nu + d2);
    let m = lambda * d * ratio.sqrt();

    let log_t1 = student_t_log_cdf_pair(m, nu + 1.0).0;
    let log_t3 = student_t_log_cdf_pair(m * ((nu + 3.0) / (nu + 1.0)).sqrt(), nu + 3.0).0;
    let w = ratio * (log_t3 - log_t1).exp();

    // Log of the component skew-t density at this point.
    let log_f = std::f64::consts::LN_2 - sigma.ln() + student_t_logpdf_unchecked(d, nu) + log_t1;
    let log_tail = 0.5 * one_m_d2.ln() - PI.ln() - log_f - (0.5 * nu + 1.0) * (d2 / (nu * one_m_d2)).ln_1p();
    let tail = log_tail.exp();

    let e1 = delta * resid * w + tail;
    let e2 = delta * delta * resid * resid * w + one_m_d2 * sigma2 + delta * resid * tail;

    let log_small_t = student_t_logpdf_unchecked(m, nu + 1.0);
    let skew_term = lambda * d * (d2 - 1.0) / ((nu + 1.0) * (nu + d2).powi(3)).sqrt() * (log_small_t - log_t1).exp();
    let e3 = w - (0.5 * (nu + d2)).ln() - ratio + digamma_unchecked(0.5 * (nu + 1.0)) + skew_term;

    PointMoments { w, e1, e2, e3, d, m }
}

/// Full E-step for a skew-t model: responsibilities and the latent moments
/// `w, e1, e2, e3`, with the e3 integral term dropped (one-step-late).
pub fn latent_moments(data: &Dataset, psi: &ModelParams) -> Result<EStepMoments> {
    Ok(estep(data, psi)?.0)
}

/// E-step for either family; also returns the observed-data log-likelihood
/// at `psi`. Normal models get the degenerate moments of
/// [`EStepMoments::normal`].
pub(crate) fn estep_any(data: &Dataset, psi: &ModelParams) -> Result<(EStepMoments, f64)> {
    match psi.family {
        Family::Stmoe => estep(data, psi),
        Family::Nmoe => {
            let terms = psi.joint_log_terms(data)?;
            let (tau, lse) = normalize_log_terms(&terms)?;
            let means = psi.expert_means(data);
            let d = DMatrix::from_fn(data.n(), psi.k(), |i, k| {
                (data.y()[i] - means[(i, k)]) / psi.experts[k].sigma2.sqrt()
            });
            Ok((EStepMoments::normal(tau, d), lse.iter().sum()))
        }
    }
}

fn estep(data: &Dataset, psi: &ModelParams) -> Result<(EStepMoments, f64)> {
    if psi.family != Family::Stmoe {
        return Err(Error::WrongFamily("stmoe"));
    }
    let terms = psi.joint_log_terms(data)?;
    let (tau, lse) = normalize_log_terms(&terms)?;
    let means = psi.expert_means(data);
    let (n, k) = tau.shape();
    let mut out = EStepMoments {
        tau,
        w: DMatrix::zeros(n, k),
        e1: DMatrix::zeros(n, k),
        e2: DMatrix::zeros(n, k),
        e3: DMatrix::zeros(n, k),
        d: DMatrix::zeros(n, k),
        m: DMatrix::zeros(n, k),
    };
    for c in 0..k {
        let e = &psi.experts[c];
        for i in 0..n {
            let pm = point_moments(data.y()[i] - means[(i, c)], e.sigma2, e.lambda, e.nu);
            out.w[(i, c)] = pm.w;
            out.e1[(i, c)] = pm.e1;
            out.e2[(i, c)] = pm.e2;
            out.e3[(i, c)] = pm.e3;
            out.d[(i, c)] = pm.d;
            out.m[(i, c)] = pm.m;
        }
    }
    Ok((out, lse.iter().sum()))
}
