//! Conditional maximization steps: IRLS for the gate, closed-form expert
//! regression updates, and scalar root finding for skewness and degrees of
//! freedom.

use crate::error::{Error, Result};
use crate::estep::EStepMoments;
use crate::model::{Dataset, GatingParams};
use crate::specfun::{digamma_unchecked, log_gamma};
use nalgebra::{Cholesky, DMatrix, DVector};
use std::f64::consts::PI;

/// Bound on the skewness root search, `δ ∈ (-B, B)`.
pub const DELTA_BOUND: f64 = 0.999_999;
const DELTA_SCAN_INTERVALS: usize = 400;
const MAX_STEP_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig {
    pub max_inner: usize,
    pub tol_inner: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        IrlsConfig {
            max_inner: 50,
            tol_inner: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsReport {
    pub alpha_new: GatingParams,
    /// `Q₁` at the start and after every accepted Newton step.
    pub q1_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn flat_index(k: usize, j: usize, q: usize) -> usize {
    k * q + j
}

fn check_gate_dims(alpha: &GatingParams, tau: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    if tau.nrows() != r.nrows() {
        return Err(Error::Dimension(format!("tau has {} rows, R has {}", tau.nrows(), r.nrows())));
    }
    if tau.ncols() != alpha.k() || r.ncols() != alpha.q() {
        return Err(Error::Dimension(format!(
            "tau is {}x{}, R has {} columns, alpha is {}x{}",
            tau.nrows(),
            tau.ncols(),
            r.ncols(),
            alpha.alpha.nrows(),
            alpha.q()
        )));
    }
    Ok(())
}

/// `Q₁(α) = Σ_i Σ_k τ_ik ln π_k(r_i; α)`.
pub fn q1_value(alpha: &GatingParams, tau: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<f64> {
    check_gate_dims(alpha, tau, r)?;
    Ok(q1_unchecked(alpha, tau, r))
}

fn q1_unchecked(alpha: &GatingParams, tau: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let mut q1 = 0.0;
    for i in 0..r.nrows() {
        let ri: Vec<f64> = r.row(i).iter().copied().collect();
        let lp = alpha.log_probs_unchecked(&ri);
        for (k, l) in lp.iter().enumerate() {
            if tau[(i, k)] > 0.0 {
                q1 += tau[(i, k)] * l;
            }
        }
    }
    q1
}

/// `Q₁` with its gradient and Hessian in the flattened `(K-1)·q`
/// parameterization (component-major).
pub fn q1_value_grad_hess(
    alpha: &GatingParams,
    tau: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    check_gate_dims(alpha, tau, r)?;
    let km1 = alpha.alpha.nrows();
    let q = alpha.q();
    let dim = km1 * q;
    let mut grad = DVector::zeros(dim);
    let mut hess = DMatrix::zeros(dim, dim);
    let mut q1 = 0.0;
    for i in 0..r.nrows() {
        let ri: Vec<f64> = r.row(i).iter().copied().collect();
        let lp = alpha.log_probs_unchecked(&ri);
        let pi: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
        let mass: f64 = tau.row(i).sum();
        for (k, l) in lp.iter().enumerate() {
            if tau[(i, k)] > 0.0 {
                q1 += tau[(i, k)] * l;
            }
        }
        for k in 0..km1 {
            let gk = tau[(i, k)] - mass * pi[k];
            for j in 0..q {
                grad[flat_index(k, j, q)] += gk * ri[j];
            }
            for l in 0..km1 {
                let c = mass * pi[k] * (if k == l { 1.0 } else { 0.0 } - pi[l]);
                if c == 0.0 {
                    continue;
                }
                for j in 0..q {
                    for m in 0..q {
                        hess[(flat_index(k, j, q), flat_index(l, m, q))] -= c * ri[j] * ri[m];
                    }
                }
            }
        }
    }
    Ok((q1, grad, hess))
}

/// Solves the symmetric positive (semi)definite system `a x = b`, adding a
/// growing diagonal ridge `ε(1 + |a_jj|)` when the factorization fails.
pub(crate) fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let mut eps = 1e-8;
    for _ in 0..12 {
        let mut repaired = a.clone();
        for j in 0..a.nrows() {
            repaired[(j, j)] += eps * (1.0 + a[(j, j)].abs());
        }
        if let Some(ch) = Cholesky::new(repaired) {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        eps *= 10.0;
    }
    None
}

fn unflatten(v: &DVector<f64>, km1: usize, q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(km1, q, |k, j| v[flat_index(k, j, q)])
}

/// Maximizes `Q₁` over the gate coefficients by Newton-Raphson with
/// step halving, so that `Q₁` never decreases.
pub fn irls_update_gating(
    tau: &DMatrix<f64>,
    r: &DMatrix<f64>,
    alpha_init: &GatingParams,
    cfg: &IrlsConfig,
) -> Result<IrlsReport> {
    check_gate_dims(alpha_init, tau, r)?;
    let km1 = alpha_init.alpha.nrows();
    let q = alpha_init.q();
    let mut alpha = alpha_init.clone();
    let (mut q1, mut grad, mut hess) = q1_value_grad_hess(&alpha, tau, r)?;
    let mut trace = vec![q1];
    if km1 == 0 {
        return Ok(IrlsReport {
            alpha_new: alpha,
            q1_trace: trace,
            iterations: 0,
            converged: true,
        });
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_inner {
        iterations += 1;
        let neg_h = -&hess;
        let Some(step) = solve_spd(&neg_h, &grad) else {
            break;
        };
        let base = DVector::from_iterator(km1 * q, (0..km1).flat_map(|k| (0..q).map(move |j| (k, j))).map(|(k, j)| alpha.alpha[(k, j)]));
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = GatingParams {
                alpha: unflatten(&(&base + &step * scale), km1, q),
            };
            if candidate.alpha.iter().all(|v| v.is_finite()) {
                let q_new = q1_unchecked(&candidate, tau, r);
                if q_new >= q1 {
                    accepted = Some((candidate, q_new));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((candidate, q_new)) = accepted else {
            // No ascent direction left at machine precision.
            converged = true;
            break;
        };
        let change = (q_new - q1).abs() / q1.abs().max(f64::MIN_POSITIVE);
        alpha = candidate;
        q1 = q_new;
        trace.push(q1);
        if change < cfg.tol_inner {
            converged = true;
            break;
        }
        let (_, g, h) = q1_value_grad_hess(&alpha, tau, r)?;
        grad = g;
        hess = h;
    }
    Ok(IrlsReport {
        alpha_new: alpha,
        q1_trace: trace,
        iterations,
        converged,
    })
}

fn check_component(data: &Dataset, m: &EStepMoments, k: usize) -> Result<()> {
    if m.n() != data.n() {
        return Err(Error::Dimension(format!("moments have {} rows, data has {}", m.n(), data.n())));
    }
    if k >= m.k() {
        return Err(Error::Dimension(format!("component {k} out of range (K = {})", m.k())));
    }
    Ok(())
}

/// Closed-form `(β_k, σ²_k)` maximizing `Q₂` for a skew-t expert at fixed
/// skewness `delta`:
/// `β = [Σ τ w x xᵀ]⁻¹ Σ τ (w y - δ e1) x` and
/// `σ² = Σ τ (w r² - 2δ e1 r + e2) / (2 (1 - δ²) Σ τ)`.
pub fn update_expert_regression(
    data: &Dataset,
    m: &EStepMoments,
    k: usize,
    delta: f64,
    sigma2_min: f64,
) -> Result<(DVector<f64>, f64)> {
    check_component(data, m, k)?;
    let p = data.p();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    let mut mass = 0.0;
    for i in 0..data.n() {
        let t = m.tau[(i, k)];
        if t == 0.0 {
            continue;
        }
        let x = data.x().row(i);
        let tw = t * m.w[(i, k)];
        let target = t * (m.w[(i, k)] * data.y()[i] - delta * m.e1[(i, k)]);
        for a in 0..p {
            rhs[a] += target * x[a];
            for b in 0..p {
                gram[(a, b)] += tw * x[a] * x[b];
            }
        }
        mass += t;
    }
    if !(mass > 0.0) {
        return Err(Error::FitFailed(format!("component {k} has no posterior mass")));
    }
    let beta = solve_spd(&gram, &rhs)
        .ok_or_else(|| Error::FitFailed(format!("weighted Gram matrix of component {k} is singular")))?;
    let fitted = data.x() * &beta;
    let mut num = 0.0;
    for i in 0..data.n() {
        let t = m.tau[(i, k)];
        if t == 0.0 {
            continue;
        }
        let res = data.y()[i] - fitted[i];
        num += t * (m.w[(i, k)] * res * res - 2.0 * delta * m.e1[(i, k)] * res + m.e2[(i, k)]);
    }
    let sigma2 = (num / (2.0 * (1.0 - delta * delta) * mass)).max(sigma2_min);
    Ok((beta, sigma2))
}

/// Weighted Gaussian regression update of a normal expert:
/// `β = [Σ τ x xᵀ]⁻¹ Σ τ y x`, `σ² = Σ τ r² / Σ τ`.
pub fn update_normal_expert(
    data: &Dataset,
    tau: &DMatrix<f64>,
    k: usize,
    sigma2_min: f64,
) -> Result<(DVector<f64>, f64)> {
    let m = EStepMoments::normal(tau.clone(), DMatrix::zeros(tau.nrows(), tau.ncols()));
    let (beta, half) = update_expert_regression(data, &m, k, 0.0, 0.0)?;
    // With w ≡ 1 and e1 = e2 = 0 the skew-t update returns half the weighted MSE.
    Ok((beta, (2.0 * half).max(sigma2_min)))
}

/// Sufficient statistics of `Q₂` as a function of `δ` at fixed `(β, σ²)`.
#[derive(Debug, Clone, Copy)]
struct SkewStats {
    /// Σ τ
    s0: f64,
    /// Σ τ d e1 / σ
    s1: f64,
    /// Σ τ (w d² + e2 / σ²)
    s2: f64,
}

impl SkewStats {
    fn new(data: &Dataset, m: &EStepMoments, k: usize, beta: &DVector<f64>, sigma2: f64) -> Self {
        let sigma = sigma2.sqrt();
        let fitted = data.x() * beta;
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for i in 0..data.n() {
            let t = m.tau[(i, k)];
            if t == 0.0 {
                continue;
            }
            let d = (data.y()[i] - fitted[i]) / sigma;
            s0 += t;
            s1 += t * d * m.e1[(i, k)] / sigma;
            s2 += t * (m.w[(i, k)] * d * d + m.e2[(i, k)] / sigma2);
        }
        SkewStats { s0, s1, s2 }
    }

    /// Stationarity condition of `Q₂` in `δ`.
    fn equation(&self, delta: f64) -> f64 {
        delta * (1.0 - delta * delta) * self.s0 + (1.0 + delta * delta) * self.s1 - delta * self.s2
    }

    /// `Q₂` up to terms that do not depend on `δ`.
    fn q2(&self, delta: f64) -> f64 {
        let omd = (1.0 - delta) * (1.0 + delta);
        -0.5 * self.s0 * omd.ln() - (self.s2 - 2.0 * delta * self.s1) / (2.0 * omd)
    }
}

/// `Q₂(θ_k)` for expert `k` at `(β, σ², δ)`.
pub fn q2_value(data: &Dataset, m: &EStepMoments, k: usize, beta: &DVector<f64>, sigma2: f64, delta: f64) -> Result<f64> {
    check_component(data, m, k)?;
    let stats = SkewStats::new(data, m, k, beta, sigma2);
    Ok(stats.s0 * (-(2.0 * PI).ln() - sigma2.ln()) + stats.q2(delta))
}

/// The skewness equation evaluated at `delta`, exposed for diagnostics and tests.
pub fn skewness_equation(data: &Dataset, m: &EStepMoments, k: usize, beta: &DVector<f64>, sigma2: f64, delta: f64) -> Result<f64> {
    check_component(data, m, k)?;
    Ok(SkewStats::new(data, m, k, beta, sigma2).equation(delta))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkewnessUpdate {
    pub delta: f64,
    /// No sign change was found on the scan grid; `delta` is the previous value.
    pub stalled: bool,
}

/// Solves the skewness equation for `δ_k` with `(β_k, σ²_k)` held at their
/// new values. Every bracketed root on a uniform scan of `(-B, B)` is refined
/// with Brent's method, and the root with the largest `Q₂` is returned.
pub fn solve_skewness(
    data: &Dataset,
    m: &EStepMoments,
    k: usize,
    beta_new: &DVector<f64>,
    sigma2_new: f64,
    delta_prev: f64,
) -> Result<SkewnessUpdate> {
    check_component(data, m, k)?;
    let stats = SkewStats::new(data, m, k, beta_new, sigma2_new);
    Ok(solve_skewness_stats(&stats, delta_prev))
}

fn solve_skewness_stats(stats: &SkewStats, delta_prev: f64) -> SkewnessUpdate {
    let f = |d: f64| stats.equation(d);
    let step = 2.0 * DELTA_BOUND / DELTA_SCAN_INTERVALS as f64;
    let mut best: Option<(f64, f64)> = None;
    let mut a = -DELTA_BOUND;
    let mut fa = f(a);
    for s in 1..=DELTA_SCAN_INTERVALS {
        let b = if s == DELTA_SCAN_INTERVALS { DELTA_BOUND } else { -DELTA_BOUND + step * s as f64 };
        let fb = f(b);
        let root = if fa == 0.0 {
            Some(a)
        } else if fa * fb < 0.0 {
            brent_root(f, a, b, 1e-14).ok()
        } else {
            None
        };
        if let Some(r) = root {
            let q = stats.q2(r);
            if best.map_or(true, |(_, bq)| q > bq) {
                best = Some((r, q));
            }
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        let q = stats.q2(a);
        if best.map_or(true, |(_, bq)| q > bq) {
            best = Some((a, q));
        }
    }
    match best {
        Some((root, q)) => {
            let prev = delta_prev.clamp(-DELTA_BOUND, DELTA_BOUND);
            if q >= stats.q2(prev) {
                SkewnessUpdate {
                    delta: root,
                    stalled: false,
                }
            } else {
                SkewnessUpdate {
                    delta: prev,
                    stalled: false,
                }
            }
        }
        None => SkewnessUpdate {
            delta: delta_prev,
            stalled: true,
        },
    }
}

/// Left-hand side of the degrees-of-freedom equation,
/// `-ψ(ν/2) + ln(ν/2) + 1 + stat`, where `stat = Σ τ (e3 - w) / Σ τ`.
pub fn dof_equation(nu: f64, stat: f64) -> f64 {
    -digamma_unchecked(0.5 * nu) + (0.5 * nu).ln() + 1.0 + stat
}

/// `Σ τ (e3 - w) / Σ τ` for component `k`.
pub fn dof_statistic(m: &EStepMoments, k: usize) -> Result<f64> {
    if k >= m.k() {
        return Err(Error::Dimension(format!("component {k} out of range (K = {})", m.k())));
    }
    let mut num = 0.0;
    let mut mass = 0.0;
    for i in 0..m.n() {
        let t = m.tau[(i, k)];
        if t == 0.0 {
            continue;
        }
        num += t * (m.e3[(i, k)] - m.w[(i, k)]);
        mass += t;
    }
    if !(mass > 0.0) {
        return Err(Error::FitFailed(format!("component {k} has no posterior mass")));
    }
    Ok(num / mass)
}

/// Root of the degrees-of-freedom equation in `[nu_min, nu_max]`, clamped to
/// the nearer bound when the equation does not change sign on the bracket.
pub fn solve_dof(m: &EStepMoments, k: usize, nu_min: f64, nu_max: f64) -> Result<f64> {
    let stat = dof_statistic(m, k)?;
    Ok(solve_dof_for_statistic(stat, nu_min, nu_max))
}

pub fn solve_dof_for_statistic(stat: f64, nu_min: f64, nu_max: f64) -> f64 {
    let f = |nu: f64| dof_equation(nu, stat);
    let (f_lo, f_hi) = (f(nu_min), f(nu_max));
    // The equation is decreasing in ν.
    if f_lo <= 0.0 {
        return nu_min;
    }
    if f_hi >= 0.0 {
        return nu_max;
    }
    brent_root(f, nu_min, nu_max, 1e-10).unwrap_or(nu_max)
}

/// `Q₃(ν_k)` using the current conditional moments.
pub fn q3_value(m: &EStepMoments, k: usize, nu: f64) -> Result<f64> {
    if k >= m.k() {
        return Err(Error::Dimension(format!("component {k} out of range (K = {})", m.k())));
    }
    let h = 0.5 * nu;
    let base = -log_gamma(h)? + h * h.ln();
    let mut q = 0.0;
    for i in 0..m.n() {
        let t = m.tau[(i, k)];
        if t == 0.0 {
            continue;
        }
        q += t * (base - h * m.w[(i, k)] + h * m.e3[(i, k)]);
    }
    Ok(q)
}

/// Brent's method on a sign-changing bracket `[a, b]`. Returns a point whose
/// final bracket is no wider than `tol`, after at most 200 iterations.
pub fn brent_root<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    const MAX_ITER: usize = 200;
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.is_nan() || fb.is_nan() || fa * fb > 0.0 {
        return Err(Error::InvalidBracket { a, b, fa, fb });
    }
    let (mut c, mut fc) = (b, fb);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..MAX_ITER {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Ok(b)
}
