//! ECM driver: initialization, E/CM alternation, stopping and multi-start.

use crate::dist::lambda_from_delta;
use crate::error::{Error, Result};
use crate::estep::{estep_any, EStepMoments};
use crate::model::{log_likelihood, Constraints, Dataset, ExpertParams, Family, GatingParams, ModelParams};
use crate::mstep::{
    irls_update_gating, solve_dof, solve_skewness, solve_spd, update_expert_regression, update_normal_expert, IrlsConfig,
    DELTA_BOUND,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const MAX_PARTITION_ATTEMPTS: usize = 50;
/// A component whose posterior mass falls below this fraction of `n` is empty.
const EMPTY_MASS_FRACTION: f64 = 1e-6;
/// Share of lowest-density points used to re-seed an empty component.
const RESEED_FRACTION: f64 = 0.03;
const INIT_GATE_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Relative log-likelihood change below which a fit has converged.
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    pub seed: u64,
    pub nu_bracket: (f64, f64),
    pub constraints: Constraints,
    /// `σ²` floor as a fraction of the sample variance of `y`.
    pub sigma2_floor: f64,
    pub irls: IrlsConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-6,
            max_iter: 1500,
            n_starts: 10,
            seed: 0,
            nu_bracket: (0.5, 200.0),
            constraints: Constraints::default(),
            sigma2_floor: 1e-10,
            irls: IrlsConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Domain(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 || self.n_starts == 0 {
            return Err(Error::Domain("max_iter and n_starts must be at least 1".into()));
        }
        let (lo, hi) = self.nu_bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Domain(format!("invalid nu bracket ({lo}, {hi})")));
        }
        if let Some(v) = self.constraints.fix_nu {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("fixed nu must be positive, got {v}")));
            }
        }
        if !(self.sigma2_floor >= 0.0) {
            return Err(Error::Domain(format!("sigma2 floor must be nonnegative, got {}", self.sigma2_floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: ModelParams,
    pub loglik: f64,
    /// Observed-data log-likelihood at the initial point and after every iteration.
    pub loglik_trace: Vec<f64>,
    pub tau: DMatrix<f64>,
    pub n_iter: usize,
    pub converged: bool,
    pub start_index: usize,
    /// Seed that produced the initialization.
    pub seed: u64,
    /// Iterations where the degrees-of-freedom update was rejected because it
    /// lowered the observed log-likelihood.
    pub nu_rejections: usize,
}

/// Seed of start `index` in a multi-start run. Start 0 uses the base seed.
pub fn start_seed(base: u64, index: usize) -> u64 {
    if index == 0 {
        return base;
    }
    // splitmix64 finalizer
    let mut z = base.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn weighted_ols(data: &Dataset, rows: &[usize]) -> Option<(DVector<f64>, f64)> {
    let p = data.p();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for &i in rows {
        let x = data.x().row(i);
        for a in 0..p {
            rhs[a] += x[a] * data.y()[i];
            for b in 0..p {
                gram[(a, b)] += x[a] * x[b];
            }
        }
    }
    let beta = nalgebra::Cholesky::new(gram)?.solve(&rhs);
    if !beta.iter().all(|v| v.is_finite()) {
        return None;
    }
    let rss: f64 = rows
        .iter()
        .map(|&i| {
            let e = data.y()[i] - data.x().row(i).transpose().dot(&beta);
            e * e
        })
        .sum();
    Some((beta, rss / rows.len() as f64))
}

fn sigma2_floor(data: &Dataset, cfg_floor: f64) -> f64 {
    (cfg_floor * data.response_variance()).max(f64::MIN_POSITIVE)
}

/// Random-partition initialization. With `null_gate` the gate starts at
/// `α = 0`; otherwise its entries are small normal draws.
pub fn initialize(
    data: &Dataset,
    k: usize,
    family: Family,
    constraints: Constraints,
    seed: u64,
    null_gate: bool,
) -> Result<ModelParams> {
    if k == 0 {
        return Err(Error::Domain("K must be at least 1".into()));
    }
    let p = data.p();
    if data.n() < k * p {
        return Err(Error::InvalidData(format!(
            "{} rows cannot seed {k} experts with {p} coefficients each",
            data.n()
        )));
    }
    let floor = sigma2_floor(data, FitConfig::default().sigma2_floor);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = if null_gate {
        GatingParams::zeros(k, data.q())
    } else {
        let mut g = GatingParams::zeros(k, data.q());
        for v in g.alpha.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = INIT_GATE_SD * z;
        }
        g
    };
    let mut experts = None;
    for _ in 0..MAX_PARTITION_ATTEMPTS {
        let labels: Vec<usize> = (0..data.n()).map(|_| rng.gen_range(0..k)).collect();
        let mut fitted = Vec::with_capacity(k);
        for c in 0..k {
            let rows: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == c).collect();
            if rows.len() < p {
                break;
            }
            match weighted_ols(data, &rows) {
                Some((beta, s2)) => fitted.push((beta, s2.max(floor))),
                None => break,
            }
        }
        if fitted.len() == k {
            experts = Some(fitted);
            break;
        }
    }
    let fitted = experts.ok_or_else(|| {
        Error::FitFailed(format!("no usable random partition into {k} clusters after {MAX_PARTITION_ATTEMPTS} attempts"))
    })?;
    let experts = fitted
        .into_iter()
        .map(|(beta, s2)| match family {
            Family::Nmoe => ExpertParams::normal(beta, s2),
            Family::Stmoe => {
                let nu = rng.gen_range(1.0..=200.0);
                let delta: f64 = rng.gen_range(-1.0..1.0);
                let nu = constraints.fix_nu.unwrap_or(nu);
                let lambda = if constraints.fix_lambda_zero {
                    0.0
                } else {
                    lambda_from_delta(delta.clamp(-DELTA_BOUND, DELTA_BOUND))
                };
                ExpertParams::skew_t(beta, s2, lambda, nu)
            }
        })
        .collect();
    ModelParams::new(family, alpha, experts, constraints)
}

struct Driver<'a> {
    data: &'a Dataset,
    cfg: &'a FitConfig,
    sigma2_min: f64,
    empty_mass: f64,
}

impl Driver<'_> {
    /// One sweep of CM-steps given the E-step at `psi`.
    fn cm_steps(&self, psi: &ModelParams, m: &EStepMoments) -> Result<ModelParams> {
        let mut next = psi.clone();
        next.gating = irls_update_gating(&m.tau, self.data.r(), &psi.gating, &self.cfg.irls)?.alpha_new;
        let c = psi.constraints;
        for k in 0..psi.k() {
            let mass: f64 = m.tau.column(k).sum();
            if mass < self.empty_mass {
                continue;
            }
            let e = &psi.experts[k];
            match psi.family {
                Family::Nmoe => {
                    if let Ok((beta, s2)) = update_normal_expert(self.data, &m.tau, k, self.sigma2_min) {
                        next.experts[k] = ExpertParams::normal(beta, s2);
                    }
                }
                Family::Stmoe => {
                    let delta = if c.fix_lambda_zero { 0.0 } else { e.delta() };
                    let Ok((beta, s2)) = update_expert_regression(self.data, m, k, delta, self.sigma2_min) else {
                        continue;
                    };
                    let lambda = if c.fix_lambda_zero {
                        0.0
                    } else {
                        lambda_from_delta(solve_skewness(self.data, m, k, &beta, s2, delta)?.delta)
                    };
                    let nu = match c.fix_nu {
                        Some(v) => v,
                        None => solve_dof(m, k, self.cfg.nu_bracket.0, self.cfg.nu_bracket.1)?,
                    };
                    next.experts[k] = ExpertParams::skew_t(beta, s2, lambda, nu);
                }
            }
        }
        Ok(next)
    }

    /// Re-seeds components with negligible posterior mass from the points the
    /// mixture explains worst. The change is kept only if it does not lower
    /// the log-likelihood.
    fn reseed_empty(&self, psi: &ModelParams, m: &EStepMoments, loglik: f64) -> Option<ModelParams> {
        let empty: Vec<usize> = (0..psi.k()).filter(|&k| m.tau.column(k).sum() < self.empty_mass).collect();
        if empty.is_empty() {
            return None;
        }
        let terms = psi.joint_log_terms(self.data).ok()?;
        let dens = crate::model::row_log_sum_exp(&terms);
        let mut order: Vec<usize> = (0..self.data.n()).collect();
        order.sort_by(|&a, &b| dens[a].total_cmp(&dens[b]).then(a.cmp(&b)));
        let take = ((RESEED_FRACTION * self.data.n() as f64).ceil() as usize).max(self.data.p() + 1);
        let rows = &order[..take.min(order.len())];
        let (beta, s2) = weighted_ols(self.data, rows)?;
        let mut candidate = psi.clone();
        for &k in &empty {
            let old = &candidate.experts[k];
            candidate.experts[k] = ExpertParams {
                beta: beta.clone(),
                sigma2: s2.max(self.sigma2_min),
                ..old.clone()
            };
        }
        match log_likelihood(self.data, &candidate) {
            Ok(ll) if ll >= loglik => Some(candidate),
            _ => None,
        }
    }

    fn run(&self, psi0: ModelParams, start_index: usize, seed: u64) -> Result<FittedModel> {
        let (mut m, mut loglik) = estep_any(self.data, &psi0)?;
        check_finite(loglik, 0)?;
        let mut psi = psi0;
        let mut trace = vec![loglik];
        let mut converged = false;
        let mut n_iter = 0;
        let mut nu_rejections = 0;
        let estimates_nu = psi.family == Family::Stmoe && psi.constraints.fix_nu.is_none();
        while n_iter < self.cfg.max_iter {
            n_iter += 1;
            let mut next = self.cm_steps(&psi, &m)?;
            let (mut m_next, mut ll_next) = estep_any(self.data, &next)?;
            if estimates_nu && !(ll_next >= loglik) {
                // The one-step-late ν update is not an exact CM-step; keep ν
                // when it lowers the likelihood.
                for (e, old) in next.experts.iter_mut().zip(&psi.experts) {
                    e.nu = old.nu;
                }
                (m_next, ll_next) = estep_any(self.data, &next)?;
                nu_rejections += 1;
            }
            check_finite(ll_next, n_iter)?;
            if let Some(reseeded) = self.reseed_empty(&next, &m_next, ll_next) {
                next = reseeded;
                (m_next, ll_next) = estep_any(self.data, &next)?;
            }
            let change = (ll_next - loglik).abs() / loglik.abs().max(1.0);
            psi = next;
            m = m_next;
            loglik = ll_next;
            trace.push(loglik);
            if change < self.cfg.tol {
                converged = true;
                break;
            }
        }
        let (params, tau) = canonical_order(psi, m.tau);
        Ok(FittedModel {
            params,
            loglik,
            loglik_trace: trace,
            tau,
            n_iter,
            converged,
            start_index,
            seed,
            nu_rejections,
        })
    }
}

fn check_finite(loglik: f64, iter: usize) -> Result<()> {
    if loglik.is_finite() {
        Ok(())
    } else {
        Err(Error::FitFailed(format!("log-likelihood became {loglik} at iteration {iter}")))
    }
}

/// Sorts components by intercept `β_k0` (ties by original index) and
/// re-expresses the gate relative to the new last component.
pub fn canonical_order(psi: ModelParams, tau: DMatrix<f64>) -> (ModelParams, DMatrix<f64>) {
    let k = psi.k();
    let mut perm: Vec<usize> = (0..k).collect();
    perm.sort_by(|&a, &b| {
        let ia = psi.experts[a].beta.get(0).copied().unwrap_or(0.0);
        let ib = psi.experts[b].beta.get(0).copied().unwrap_or(0.0);
        ia.total_cmp(&ib).then(a.cmp(&b))
    });
    if perm.iter().enumerate().all(|(i, &p)| i == p) {
        return (psi, tau);
    }
    let params = psi.permuted(&perm).expect("sorted indices form a permutation");
    let tau = DMatrix::from_fn(tau.nrows(), k, |i, c| tau[(i, perm[c])]);
    (params, tau)
}

/// Enforces the configured constraints on a starting point.
fn constrain(mut psi: ModelParams, c: Constraints) -> ModelParams {
    psi.constraints = c;
    if psi.family == Family::Stmoe {
        for e in &mut psi.experts {
            if c.fix_lambda_zero {
                e.lambda = 0.0;
            }
            if let Some(v) = c.fix_nu {
                e.nu = v;
            }
        }
    }
    psi
}

/// Runs ECM from a given starting point. The constraints of `cfg` override
/// those stored in `psi0`.
pub fn fit_from(data: &Dataset, psi0: ModelParams, cfg: &FitConfig) -> Result<FittedModel> {
    fit_from_indexed(data, psi0, cfg, 0, cfg.seed)
}

fn fit_from_indexed(data: &Dataset, psi0: ModelParams, cfg: &FitConfig, start_index: usize, seed: u64) -> Result<FittedModel> {
    cfg.validate()?;
    let psi0 = constrain(psi0, cfg.constraints);
    psi0.validate()?;
    if psi0.p() != data.p() || psi0.q() != data.q() {
        return Err(Error::Dimension(format!(
            "model expects p = {}, q = {}; data has p = {}, q = {}",
            psi0.p(),
            psi0.q(),
            data.p(),
            data.q()
        )));
    }
    let driver = Driver {
        data,
        cfg,
        sigma2_min: sigma2_floor(data, cfg.sigma2_floor),
        empty_mass: EMPTY_MASS_FRACTION * data.n() as f64,
    };
    driver.run(psi0, start_index, seed)
}

fn fit_start(data: &Dataset, k: usize, family: Family, cfg: &FitConfig, start_index: usize) -> Result<FittedModel> {
    let seed = start_seed(cfg.seed, start_index);
    let psi0 = initialize(data, k, family, cfg.constraints, seed, start_index == 0)?;
    fit_from_indexed(data, psi0, cfg, start_index, seed)
}

/// Single ECM run initialized with `cfg.seed` and a null gate.
pub fn fit(data: &Dataset, k: usize, family: Family, cfg: &FitConfig) -> Result<FittedModel> {
    fit_start(data, k, family, cfg, 0)
}

/// Runs `cfg.n_starts` independent fits and keeps the highest log-likelihood,
/// preferring converged runs; ties go to the lowest start index.
pub fn multi_start_fit(data: &Dataset, k: usize, family: Family, cfg: &FitConfig) -> Result<FittedModel> {
    cfg.validate()?;
    let runs: Vec<Result<FittedModel>> = (0..cfg.n_starts)
        .into_par_iter()
        .map(|s| fit_start(data, k, family, cfg, s))
        .collect();
    let mut best: Option<FittedModel> = None;
    let mut last_err = None;
    for run in runs {
        match run {
            Ok(f) => {
                let better = match &best {
                    None => true,
                    Some(b) => (f.converged, f.loglik) > (b.converged, b.loglik),
                };
                if better {
                    best = Some(f);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        Error::FitFailed(format!(
            "all {} starts failed; last error: {}",
            cfg.n_starts,
            last_err.map_or_else(|| "none".to_string(), |e| e.to_string())
        ))
    })
}

/// Weighted least squares `β = [Σ w x xᵀ]⁻¹ Σ w y x`.
pub fn weighted_least_squares(data: &Dataset, weights: &[f64]) -> Result<DVector<f64>> {
    if weights.len() != data.n() {
        return Err(Error::Dimension(format!("{} weights for {} rows", weights.len(), data.n())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Domain("weights must be finite and nonnegative".into()));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(Error::FitFailed("every weight is zero".into()));
    }
    let p = data.p();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for (i, &w) in weights.iter().enumerate() {
        let x = data.x().row(i);
        for a in 0..p {
            rhs[a] += w * x[a] * data.y()[i];
            for b in 0..p {
                gram[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    solve_spd(&gram, &rhs).ok_or_else(|| Error::FitFailed("weighted Gram matrix is singular".into()))
}
