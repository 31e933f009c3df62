//! Parameter containers, the multinomial-logistic gate, mixture densities and
//! the observed-data log-likelihood.

use crate::dist::{delta_from_lambda, normal_logpdf_scaled, skew_t_logpdf_unchecked};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Responses with row-aligned expert covariates `X` (n×p) and gating
/// covariates `R` (n×q). By convention both carry a leading intercept column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset has no rows".into()));
        }
        if x.nrows() != n || r.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, X has {}, R has {}",
                x.nrows(),
                r.nrows()
            )));
        }
        if x.ncols() == 0 || r.ncols() == 0 {
            return Err(Error::Dimension("X and R need at least one column".into()));
        }
        let finite = |v: &f64| v.is_finite();
        if !y.iter().all(finite) || !x.iter().all(finite) || !r.iter().all(finite) {
            return Err(Error::InvalidData("dataset contains NaN or infinite entries".into()));
        }
        Ok(Dataset { y, x, r })
    }

    /// Linear-expert, linear-gate convention `x_i = r_i = (1, t_i)`.
    pub fn from_scalar_covariate(t: &[f64], y: &[f64]) -> Result<Self> {
        if t.len() != y.len() {
            return Err(Error::Dimension(format!(
                "covariate has {} entries, response has {}",
                t.len(),
                y.len()
            )));
        }
        let design = DMatrix::from_fn(t.len(), 2, |i, j| if j == 0 { 1.0 } else { t[i] });
        Dataset::new(DVector::from_column_slice(y), design.clone(), design)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.r.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn x_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn r_row(&self, i: usize) -> Vec<f64> {
        self.r.row(i).iter().copied().collect()
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.p() != other.p() || self.q() != other.q() {
            return Err(Error::Dimension("datasets have different widths".into()));
        }
        let n = self.n() + other.n();
        let y = DVector::from_fn(n, |i, _| {
            if i < self.n() {
                self.y[i]
            } else {
                other.y[i - self.n()]
            }
        });
        let stack = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            DMatrix::from_fn(n, a.ncols(), |i, j| {
                if i < a.nrows() {
                    a[(i, j)]
                } else {
                    b[(i - a.nrows(), j)]
                }
            })
        };
        Dataset::new(y, stack(&self.x, &other.x), stack(&self.r, &other.r))
    }

    /// Copy with the response replaced.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Dataset> {
        Dataset::new(y, self.x.clone(), self.r.clone())
    }

    /// Sub-dataset made of the listed rows.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let x = self.x.select_rows(rows);
        let r = self.r.select_rows(rows);
        Dataset::new(y, x, r)
    }

    pub fn response_variance(&self) -> f64 {
        let n = self.n() as f64;
        let mean = self.y.mean();
        self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Normal experts.
    Nmoe,
    /// Skew-t experts.
    Stmoe,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Nmoe => "nmoe",
            Family::Stmoe => "stmoe",
        }
    }

    pub fn parse(s: &str) -> Result<Family> {
        match s.to_ascii_lowercase().as_str() {
            "nmoe" | "normal" => Ok(Family::Nmoe),
            "stmoe" | "skew-t" | "skewt" => Ok(Family::Stmoe),
            other => Err(Error::Usage(format!("unknown family '{other}' (expected nmoe or stmoe)"))),
        }
    }
}

/// Logistic gate coefficients: row `k` is `α_k`; `α_K = 0` is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingParams {
    pub alpha: DMatrix<f64>,
}

impl GatingParams {
    pub fn new(alpha: DMatrix<f64>) -> Result<Self> {
        if !alpha.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("gating coefficients must be finite".into()));
        }
        Ok(GatingParams { alpha })
    }

    /// All-zero gate, i.e. equal proportions.
    pub fn zeros(k: usize, q: usize) -> Self {
        GatingParams {
            alpha: DMatrix::zeros(k.saturating_sub(1), q),
        }
    }

    pub fn k(&self) -> usize {
        self.alpha.nrows() + 1
    }

    pub fn q(&self) -> usize {
        self.alpha.ncols()
    }

    /// `ln π_k(r; α)` for every component, by a stable log-softmax.
    pub fn log_probs(&self, r: &[f64]) -> Result<Vec<f64>> {
        if r.len() != self.q() {
            return Err(Error::Dimension(format!(
                "gating covariate has length {}, coefficients expect {}",
                r.len(),
                self.q()
            )));
        }
        Ok(self.log_probs_unchecked(r))
    }

    pub(crate) fn log_probs_unchecked(&self, r: &[f64]) -> Vec<f64> {
        let mut eta: Vec<f64> = (0..self.alpha.nrows())
            .map(|k| r.iter().enumerate().map(|(j, rv)| self.alpha[(k, j)] * rv).sum())
            .collect();
        eta.push(0.0);
        let lse = log_sum_exp(&eta);
        eta.iter_mut().for_each(|e| *e -= lse);
        eta
    }
}

/// Gate probabilities `π_k(r; α)`, normalized to sum to one.
pub fn gating_probs(r: &[f64], gp: &GatingParams) -> Result<Vec<f64>> {
    let mut p: Vec<f64> = gp.log_probs(r)?.into_iter().map(f64::exp).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// One expert: `(β, σ², λ, ν)`. Normal experts ignore `lambda` and `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub lambda: f64,
    pub nu: f64,
}

impl ExpertParams {
    pub fn normal(beta: DVector<f64>, sigma2: f64) -> Self {
        ExpertParams {
            beta,
            sigma2,
            lambda: 0.0,
            nu: f64::INFINITY,
        }
    }

    pub fn skew_t(beta: DVector<f64>, sigma2: f64, lambda: f64, nu: f64) -> Self {
        ExpertParams {
            beta,
            sigma2,
            lambda,
            nu,
        }
    }

    pub fn delta(&self) -> f64 {
        delta_from_lambda(self.lambda)
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.beta.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Optional restrictions honored by the fitting driver.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Constraints {
    /// Hold `λ_k = 0` for every expert (t experts).
    pub fix_lambda_zero: bool,
    /// Hold every `ν_k` at this value.
    pub fix_nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub family: Family,
    pub gating: GatingParams,
    pub experts: Vec<ExpertParams>,
    pub constraints: Constraints,
}

impl ModelParams {
    pub fn new(
        family: Family,
        gating: GatingParams,
        experts: Vec<ExpertParams>,
        constraints: Constraints,
    ) -> Result<Self> {
        let m = ModelParams {
            family,
            gating,
            experts,
            constraints,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.experts.len()
    }

    pub fn p(&self) -> usize {
        self.experts.first().map_or(0, |e| e.beta.len())
    }

    pub fn q(&self) -> usize {
        self.gating.q()
    }

    pub fn validate(&self) -> Result<()> {
        if self.experts.is_empty() {
            return Err(Error::Domain("a model needs at least one expert".into()));
        }
        if self.gating.k() != self.k() {
            return Err(Error::Dimension(format!(
                "{} experts but {} gating rows (expected K-1)",
                self.k(),
                self.gating.alpha.nrows()
            )));
        }
        let p = self.p();
        for (k, e) in self.experts.iter().enumerate() {
            if e.beta.len() != p {
                return Err(Error::Dimension(format!("expert {k} has {} coefficients, expected {p}", e.beta.len())));
            }
            if !e.beta.iter().all(|v| v.is_finite()) {
                return Err(Error::Domain(format!("expert {k} has non-finite coefficients")));
            }
            if !(e.sigma2 > 0.0) || !e.sigma2.is_finite() {
                return Err(Error::Domain(format!("expert {k} has sigma2 = {}", e.sigma2)));
            }
            if self.family == Family::Stmoe {
                if !e.lambda.is_finite() {
                    return Err(Error::Domain(format!("expert {k} has lambda = {}", e.lambda)));
                }
                if !(e.nu > 0.0) {
                    return Err(Error::Domain(format!("expert {k} has nu = {}", e.nu)));
                }
            }
        }
        Ok(())
    }

    /// The same model with components reordered so that new component `j` is
    /// old component `perm[j]`; the gate is re-expressed against the new last
    /// component.
    pub fn permuted(&self, perm: &[usize]) -> Result<ModelParams> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k || !perm.iter().all(|&c| c < k && !std::mem::replace(&mut seen[c], true)) {
            return Err(Error::Dimension(format!("{perm:?} is not a permutation of {k} components")));
        }
        let q = self.q();
        let full = |c: usize, j: usize| if c + 1 == k { 0.0 } else { self.gating.alpha[(c, j)] };
        let last = perm[k - 1];
        let alpha = DMatrix::from_fn(k - 1, q, |row, j| full(perm[row], j) - full(last, j));
        Ok(ModelParams {
            family: self.family,
            gating: GatingParams { alpha },
            experts: perm.iter().map(|&c| self.experts[c].clone()).collect(),
            constraints: self.constraints,
        })
    }

    /// `ln f_k(y | x)` for expert `k` at a point whose expert mean is `mean`.
    pub(crate) fn expert_logpdf_at_mean(&self, k: usize, y: f64, mean: f64) -> f64 {
        let e = &self.experts[k];
        match self.family {
            Family::Nmoe => normal_logpdf_scaled(y, mean, e.sigma2),
            Family::Stmoe => skew_t_logpdf_unchecked(y, mean, e.sigma2, e.lambda, e.nu),
        }
    }

    pub(crate) fn check_point(&self, x: &[f64], r: &[f64]) -> Result<()> {
        if x.len() != self.p() {
            return Err(Error::Dimension(format!(
                "expert covariate has length {}, model expects {}",
                x.len(),
                self.p()
            )));
        }
        if r.len() != self.q() {
            return Err(Error::Dimension(format!(
                "gating covariate has length {}, model expects {}",
                r.len(),
                self.q()
            )));
        }
        Ok(())
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.p() != self.p() || data.q() != self.q() {
            return Err(Error::Dimension(format!(
                "data has p={}, q={}; model has p={}, q={}",
                data.p(),
                data.q(),
                self.p(),
                self.q()
            )));
        }
        Ok(())
    }

    /// `ln π_k(r_i) + ln f_k(y_i | x_i)` for every row and component (n×K).
    pub fn joint_log_terms(&self, data: &Dataset) -> Result<DMatrix<f64>> {
        self.check_data(data)?;
        let k = self.k();
        let means = self.expert_means(data);
        let mut out = DMatrix::zeros(data.n(), k);
        for i in 0..data.n() {
            let r = data.r_row(i);
            let lp = self.gating.log_probs_unchecked(&r);
            for c in 0..k {
                out[(i, c)] = lp[c] + self.expert_logpdf_at_mean(c, data.y()[i], means[(i, c)]);
            }
        }
        Ok(out)
    }

    /// `β_kᵀ x_i` for every row and component (n×K).
    pub fn expert_means(&self, data: &Dataset) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(data.n(), self.k());
        for (c, e) in self.experts.iter().enumerate() {
            m.set_column(c, &(data.x() * &e.beta));
        }
        m
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln Σ_k π_k(r) f_k(y | x)`.
pub fn mixture_logpdf(y: f64, x: &[f64], r: &[f64], psi: &ModelParams) -> Result<f64> {
    psi.check_point(x, r)?;
    let lp = psi.gating.log_probs_unchecked(r);
    let terms: Vec<f64> = (0..psi.k())
        .map(|k| lp[k] + psi.expert_logpdf_at_mean(k, y, psi.experts[k].mean(x)))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Observed-data log-likelihood `Σ_i ln f(y_i | r_i, x_i; Ψ)`.
pub fn log_likelihood(data: &Dataset, psi: &ModelParams) -> Result<f64> {
    let terms = psi.joint_log_terms(data)?;
    Ok(row_log_sum_exp(&terms).iter().sum())
}

pub(crate) fn row_log_sum_exp(terms: &DMatrix<f64>) -> Vec<f64> {
    (0..terms.nrows())
        .map(|i| {
            let row: Vec<f64> = terms.row(i).iter().copied().collect();
            log_sum_exp(&row)
        })
        .collect()
}
