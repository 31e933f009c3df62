//! Synthetic data from either model family, outlier contamination, and the
//! error metrics used by the simulation studies.

use crate::dist::{draw_skew_t, SkewTParams};
use crate::ecm::{multi_start_fit, start_seed, FitConfig, FittedModel};
use crate::error::{Error, Result};
use crate::model::{gating_probs, Constraints, Dataset, ExpertParams, Family, GatingParams, ModelParams};
use crate::predict::predict;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Response assigned to every contaminated row.
pub const OUTLIER_RESPONSE: f64 = -2.0;

/// Two linear experts on `x ~ U(-1, 1)`, `x = r = (1, x)`:
/// gate `α₁ = (0, 10)`, experts `β₁ = (0, 1)`, `β₂ = (0, -1)`, `σ₁ = σ₂ = 0.1`,
/// and for skew-t experts `λ = (3, -10)`, `ν = (5, 7)`.
pub fn reference_truth(family: Family) -> ModelParams {
    let gate = GatingParams::new(DMatrix::from_row_slice(1, 2, &[0.0, 10.0])).expect("finite");
    let b1 = DVector::from_vec(vec![0.0, 1.0]);
    let b2 = DVector::from_vec(vec![0.0, -1.0]);
    let s2 = 0.1 * 0.1;
    let experts = match family {
        Family::Nmoe => vec![ExpertParams::normal(b1, s2), ExpertParams::normal(b2, s2)],
        Family::Stmoe => vec![
            ExpertParams::skew_t(b1, s2, 3.0, 5.0),
            ExpertParams::skew_t(b2, s2, -10.0, 7.0),
        ],
    };
    ModelParams::new(family, gate, experts, Constraints::default()).expect("valid reference model")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub truth: ModelParams,
    pub n: usize,
    /// Probability that a row is replaced by an outlier.
    pub outlier_rate: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.truth.validate()?;
        if self.n == 0 {
            return Err(Error::Domain("n must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::Domain(format!("outlier rate must lie in [0, 1], got {}", self.outlier_rate)));
        }
        if self.truth.p() != 2 || self.truth.q() != 2 {
            return Err(Error::Dimension(format!(
                "simulation uses x = r = (1, x); truth has p = {}, q = {}",
                self.truth.p(),
                self.truth.q()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub data: Dataset,
    /// Generating component of every row (0-based).
    pub labels: Vec<usize>,
    /// Rows replaced by outliers.
    pub outliers: Vec<bool>,
}

fn draw_response<R: Rng>(rng: &mut R, psi: &ModelParams, k: usize, x: &[f64]) -> f64 {
    let e = &psi.experts[k];
    let mu = e.mean(x);
    match psi.family {
        Family::Nmoe => {
            let z: f64 = StandardNormal.sample(rng);
            mu + e.sigma2.sqrt() * z
        }
        Family::Stmoe => draw_skew_t(rng, &SkewTParams { mu, sigma2: e.sigma2, lambda: e.lambda, nu: e.nu }),
    }
}

/// Draws `n` rows from the truth without contamination.
pub fn generate(cfg: &SimConfig) -> Result<Simulated> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut t = Vec::with_capacity(cfg.n);
    let mut y = Vec::with_capacity(cfg.n);
    let mut labels = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let x: f64 = rng.gen_range(-1.0..1.0);
        let row = [1.0, x];
        let pi = gating_probs(&row, &cfg.truth.gating)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut z = pi.len() - 1;
        for (k, p) in pi.iter().enumerate() {
            acc += p;
            if u < acc {
                z = k;
                break;
            }
        }
        t.push(x);
        y.push(draw_response(&mut rng, &cfg.truth, z, &row));
        labels.push(z);
    }
    Ok(Simulated {
        data: Dataset::from_scalar_covariate(&t, &y)?,
        labels,
        outliers: vec![false; cfg.n],
    })
}

/// Replaces each row independently with probability `c` by an outlier
/// `(x ~ U(-1, 1), y = -2)`. Returns the new data and the replaced-row mask.
pub fn inject_outliers(data: &Dataset, c: f64, seed: u64) -> Result<(Dataset, Vec<bool>)> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Domain(format!("outlier rate must lie in [0, 1], got {c}")));
    }
    if data.p() != 2 || data.q() != 2 {
        return Err(Error::Dimension("outliers are drawn for the design x = r = (1, x)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = data.x().clone();
    let mut r = data.r().clone();
    let mut y = data.y().clone();
    let mut mask = vec![false; data.n()];
    for (i, hit) in mask.iter_mut().enumerate() {
        let u: f64 = rng.gen();
        let t: f64 = rng.gen_range(-1.0..1.0);
        if u < c {
            *hit = true;
            x[(i, 1)] = t;
            r[(i, 1)] = t;
            y[i] = OUTLIER_RESPONSE;
        }
    }
    Ok((Dataset::new(y, x, r)?, mask))
}

/// [`generate`] followed by [`inject_outliers`] at `cfg.outlier_rate`.
pub fn simulate(cfg: &SimConfig) -> Result<Simulated> {
    let clean = generate(cfg)?;
    let (data, outliers) = inject_outliers(&clean.data, cfg.outlier_rate, start_seed(cfg.seed, 1))?;
    Ok(Simulated {
        data,
        labels: clean.labels,
        outliers,
    })
}

/// `(1/n) Σ_i (E_a[Y | r_i, x_i] - E_b[Y | r_i, x_i])²`.
pub fn mse_mean_function(truth: &ModelParams, est: &ModelParams, data: &Dataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.n() {
        let (x, r) = (data.x_row(i), data.r_row(i));
        let a = predict(&x, &r, truth)?.mean;
        let b = predict(&x, &r, est)?.mean;
        total += (a - b) * (a - b);
    }
    Ok(total / data.n() as f64)
}

/// Named scalar coordinates in the order gate, coefficients, scales,
/// skewness, degrees of freedom (the last two for skew-t models only).
/// Indices are 1-based for components and 0-based for coefficients.
pub fn parameter_coordinates(psi: &ModelParams) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for k in 0..psi.gating.alpha.nrows() {
        for j in 0..psi.q() {
            out.push((format!("alpha{}{}", k + 1, j), psi.gating.alpha[(k, j)]));
        }
    }
    for (k, e) in psi.experts.iter().enumerate() {
        for (j, b) in e.beta.iter().enumerate() {
            out.push((format!("beta{}{}", k + 1, j), *b));
        }
    }
    for (k, e) in psi.experts.iter().enumerate() {
        out.push((format!("sigma{}", k + 1), e.sigma2.sqrt()));
    }
    if psi.family == Family::Stmoe {
        for (k, e) in psi.experts.iter().enumerate() {
            out.push((format!("lambda{}", k + 1), e.lambda));
        }
        for (k, e) in psi.experts.iter().enumerate() {
            out.push((format!("nu{}", k + 1), e.nu));
        }
    }
    out
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// `est` with its components relabeled to minimize the total squared
/// coefficient error against `truth`; ties go to the lexicographically
/// smallest permutation.
pub fn align_to(truth: &ModelParams, est: &ModelParams) -> Result<ModelParams> {
    check_shapes(truth, est)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(truth.k()) {
        let err: f64 = perm
            .iter()
            .enumerate()
            .map(|(j, &c)| (&truth.experts[j].beta - &est.experts[c].beta).norm_squared())
            .sum();
        if best.as_ref().map_or(true, |(b, _)| err < *b) {
            best = Some((err, perm));
        }
    }
    est.permuted(&best.expect("at least one permutation").1)
}

fn check_shapes(truth: &ModelParams, est: &ModelParams) -> Result<()> {
    if truth.family != est.family || truth.k() != est.k() || truth.p() != est.p() || truth.q() != est.q() {
        return Err(Error::Dimension(format!(
            "cannot compare a {} model with K={}, p={}, q={} to a {} model with K={}, p={}, q={}",
            truth.family.name(),
            truth.k(),
            truth.p(),
            truth.q(),
            est.family.name(),
            est.k(),
            est.p(),
            est.q()
        )));
    }
    Ok(())
}

/// Squared error of every coordinate of [`parameter_coordinates`] after
/// label alignment.
pub fn mse_parameters(truth: &ModelParams, est: &ModelParams) -> Result<Vec<(String, f64)>> {
    let aligned = align_to(truth, est)?;
    Ok(parameter_coordinates(truth)
        .into_iter()
        .zip(parameter_coordinates(&aligned))
        .map(|((name, a), (_, b))| (name, (a - b) * (a - b)))
        .collect())
}

fn trial_fit(data: &Dataset, k: usize, family: Family, fit_cfg: &FitConfig, seed: u64) -> Result<FittedModel> {
    let cfg = FitConfig { seed, ..fit_cfg.clone() };
    multi_start_fit(data, k, family, &cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRow {
    pub n: usize,
    /// Per-coordinate squared errors averaged over successful trials.
    pub mean_sq_err: Vec<(String, f64)>,
    pub trials: usize,
    pub failures: usize,
}

/// Parameter-estimation error against sample size. Trial `t` at every `n`
/// uses data seed `start_seed(seed, t)`.
pub fn consistency_experiment(
    truth: &ModelParams,
    fit_family: Family,
    n_grid: &[usize],
    trials: usize,
    seed: u64,
    fit_cfg: &FitConfig,
) -> Result<Vec<ConsistencyRow>> {
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let mut sums: Option<Vec<(String, f64)>> = None;
        let mut ok = 0;
        for t in 0..trials {
            let data_seed = start_seed(seed, t);
            let sim = generate(&SimConfig { truth: truth.clone(), n, outlier_rate: 0.0, seed: data_seed })?;
            let errs = trial_fit(&sim.data, truth.k(), fit_family, fit_cfg, data_seed)
                .and_then(|f| mse_parameters(truth, &f.params));
            let Ok(errs) = errs else { continue };
            ok += 1;
            match &mut sums {
                None => sums = Some(errs),
                Some(s) => s.iter_mut().zip(errs).for_each(|(a, (_, b))| a.1 += b),
            }
        }
        let mean_sq_err = sums
            .unwrap_or_else(|| parameter_coordinates(truth).into_iter().map(|(k, _)| (k, f64::NAN)).collect())
            .into_iter()
            .map(|(k, v)| (k, v / ok as f64))
            .collect();
        rows.push(ConsistencyRow { n, mean_sq_err, trials, failures: trials - ok });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub outlier_rate: f64,
    pub fit_family: Family,
    /// Mean-function MSE of every trial; `NaN` where the fit failed or its mean is undefined.
    pub mse: Vec<f64>,
}

impl RobustnessRow {
    fn finite(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.mse.iter().copied().filter(|x| x.is_finite()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn mean(&self) -> f64 {
        let v = self.finite();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn median(&self) -> f64 {
        let v = self.finite();
        match v.len() {
            0 => f64::NAN,
            m if m % 2 == 1 => v[m / 2],
            m => 0.5 * (v[m / 2 - 1] + v[m / 2]),
        }
    }

    pub fn failures(&self) -> usize {
        self.mse.len() - self.finite().len()
    }
}

/// Mean-function error against outlier rate for both fitted families. Trial
/// `t` uses the same clean sample at every rate.
pub fn robustness_experiment(
    truth: &ModelParams,
    rates: &[f64],
    n: usize,
    trials: usize,
    seed: u64,
    fit_cfg: &FitConfig,
) -> Result<Vec<RobustnessRow>> {
    let mut rows = Vec::new();
    for &c in rates {
        for family in [Family::Nmoe, Family::Stmoe] {
            let mut mse = Vec::with_capacity(trials);
            for t in 0..trials {
                let data_seed = start_seed(seed, t);
                let sim = simulate(&SimConfig { truth: truth.clone(), n, outlier_rate: c, seed: data_seed })?;
                let value = trial_fit(&sim.data, truth.k(), family, fit_cfg, data_seed)
                    .and_then(|f| mse_mean_function(truth, &f.params, &sim.data))
                    .unwrap_or(f64::NAN);
                mse.push(value);
            }
            rows.push(RobustnessRow { outlier_rate: c, fit_family: family, mse });
        }
    }
    Ok(rows)
}
