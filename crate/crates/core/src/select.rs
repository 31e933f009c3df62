//! Information criteria and choice of the number of experts.

use crate::ecm::{multi_start_fit, FitConfig, FittedModel};
use crate::error::{Error, Result};
use crate::model::{Dataset, Family, ModelParams};
use crate::predict::map_partition;
use nalgebra::DMatrix;

/// Number of free parameters: `K(p+q+3) - q - 1` for normal experts and
/// `K(p+q+5) - q - 1` for skew-t experts.
pub fn free_params(k: usize, p: usize, q: usize, family: Family) -> usize {
    let per = match family {
        Family::Nmoe => p + q + 3,
        Family::Stmoe => p + q + 5,
    };
    k * per - q - 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriteriaRow {
    pub k: usize,
    pub loglik: f64,
    /// Complete-data log-likelihood with MAP labels in place of the latent classes.
    pub complete_loglik: f64,
    pub eta: usize,
    pub aic: f64,
    pub bic: f64,
    pub icl: f64,
}

/// `Σ_i ln[π_ẑ(r_i) f_ẑ(y_i | x_i)]` with `ẑ_i` the MAP label under `tau`.
pub fn complete_loglik(data: &Dataset, psi: &ModelParams, tau: &DMatrix<f64>) -> Result<f64> {
    if tau.nrows() != data.n() || tau.ncols() != psi.k() {
        return Err(Error::Dimension(format!(
            "tau is {}x{}, expected {}x{}",
            tau.nrows(),
            tau.ncols(),
            data.n(),
            psi.k()
        )));
    }
    let terms = psi.joint_log_terms(data)?;
    Ok(map_partition(tau).iter().enumerate().map(|(i, &z)| terms[(i, z)]).sum())
}

/// AIC, BIC and ICL in the "larger is better" convention:
/// `AIC = ln L - η`, `BIC = ln L - η ln(n)/2`, `ICL = ln Lc - η ln(n)/2`.
pub fn criteria_from_parts(k: usize, loglik: f64, complete_loglik: f64, eta: usize, n: usize) -> CriteriaRow {
    let eta_f = eta as f64;
    let half_log_n = 0.5 * (n as f64).ln();
    CriteriaRow {
        k,
        loglik,
        complete_loglik,
        eta,
        aic: loglik - eta_f,
        bic: loglik - eta_f * half_log_n,
        icl: complete_loglik - eta_f * half_log_n,
    }
}

pub fn criteria(fit: &FittedModel, data: &Dataset) -> Result<CriteriaRow> {
    let psi = &fit.params;
    let lc = complete_loglik(data, psi, &fit.tau)?;
    let eta = free_params(psi.k(), psi.p(), psi.q(), psi.family);
    Ok(criteria_from_parts(psi.k(), fit.loglik, lc, eta, data.n()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub rows: Vec<CriteriaRow>,
    /// `(K, message)` for every K whose fit failed.
    pub failures: Vec<(usize, String)>,
    pub best_aic: usize,
    pub best_bic: usize,
    pub best_icl: usize,
}

/// K of the row with the largest criterion value; ties go to the smaller K.
pub fn argmax_k(rows: &[CriteriaRow], criterion: impl Fn(&CriteriaRow) -> f64) -> Option<usize> {
    let mut best: Option<&CriteriaRow> = None;
    for row in rows {
        let better = match best {
            None => true,
            Some(b) => criterion(row) > criterion(b) || (criterion(row) == criterion(b) && row.k < b.k),
        };
        if better {
            best = Some(row);
        }
    }
    best.map(|r| r.k)
}

/// Fits every K in `k_range` with [`multi_start_fit`] and tabulates the criteria.
pub fn select_k(
    data: &Dataset,
    family: Family,
    k_range: impl IntoIterator<Item = usize>,
    cfg: &FitConfig,
) -> Result<Selection> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut any = false;
    for k in k_range {
        any = true;
        match multi_start_fit(data, k, family, cfg).and_then(|f| criteria(&f, data)) {
            Ok(row) => rows.push(row),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    if !any {
        return Err(Error::Domain("the range of K is empty".into()));
    }
    if rows.is_empty() {
        let msgs: Vec<String> = failures.iter().map(|(k, m)| format!("K={k}: {m}")).collect();
        return Err(Error::FitFailed(format!("no K could be fitted ({})", msgs.join("; "))));
    }
    let pick = |f: fn(&CriteriaRow) -> f64| argmax_k(&rows, f).expect("rows is nonempty");
    Ok(Selection {
        best_aic: pick(|r| r.aic),
        best_bic: pick(|r| r.bic),
        best_icl: pick(|r| r.icl),
        rows,
        failures,
    })
}
