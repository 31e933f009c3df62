//! Predictive moments of a fitted mixture of experts and MAP clustering.

use crate::error::{Error, Result};
use crate::model::{Family, ModelParams};
use crate::specfun::xi;
use nalgebra::DMatrix;

/// Gate mass at or below which a component is ignored when deciding whether
/// a predictive moment exists.
pub const NEGLIGIBLE_GATE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// `None` when some non-negligible expert has `ν ≤ 2`.
    pub variance: Option<f64>,
    pub variance_defined: bool,
    /// Expert means; a negligible expert with `ν ≤ 1` reports its location `βᵀx`.
    pub per_expert_mean: Vec<f64>,
    pub gate: Vec<f64>,
}

/// Mean and variance of expert `k` at `x`. The variance is `None` when it
/// does not exist; the mean errors when it does not exist.
pub fn expert_moments(psi: &ModelParams, k: usize, x: &[f64]) -> Result<(f64, Option<f64>)> {
    let e = &psi.experts[k];
    let loc = e.mean(x);
    match psi.family {
        Family::Nmoe => Ok((loc, Some(e.sigma2))),
        Family::Stmoe => {
            let delta = e.delta();
            if delta == 0.0 {
                // Symmetric experts have mean βᵀx whenever ν > 1.
                if !(e.nu > 1.0) {
                    return Err(undefined_mean(k, e.nu));
                }
                let var = (e.nu > 2.0).then(|| e.sigma2 * e.nu / (e.nu - 2.0));
                return Ok((loc, var));
            }
            let xi_nu = xi(e.nu).map_err(|_| undefined_mean(k, e.nu))?;
            let sigma = e.sigma2.sqrt();
            let mean = loc + sigma * delta * xi_nu;
            let var = (e.nu > 2.0).then(|| (e.nu / (e.nu - 2.0) - delta * delta * xi_nu * xi_nu) * e.sigma2);
            Ok((mean, var))
        }
    }
}

fn undefined_mean(k: usize, nu: f64) -> Error {
    Error::UndefinedMoment(format!("expert {} has nu = {nu} <= 1, so its mean does not exist", k + 1))
}

/// Predictive mean `Σ π_k μ_k` and variance `Σ π_k (v_k + μ_k²) - mean²`
/// (evaluated as `Σ π_k v_k + Σ π_k (μ_k - mean)²`).
pub fn predict(x: &[f64], r: &[f64], psi: &ModelParams) -> Result<Prediction> {
    psi.validate()?;
    psi.check_point(x, r)?;
    let gate = crate::model::gating_probs(r, &psi.gating)?;
    let k = psi.k();
    let mut per_expert_mean = Vec::with_capacity(k);
    let mut per_expert_var = Vec::with_capacity(k);
    for c in 0..k {
        match expert_moments(psi, c, x) {
            Ok((m, v)) => {
                per_expert_mean.push(m);
                per_expert_var.push(v);
            }
            Err(e) if gate[c] > NEGLIGIBLE_GATE => return Err(e),
            Err(_) => {
                per_expert_mean.push(psi.experts[c].mean(x));
                per_expert_var.push(None);
            }
        }
    }
    let mean: f64 = gate.iter().zip(&per_expert_mean).map(|(g, m)| g * m).sum();
    let variance_defined = (0..k).all(|c| per_expert_var[c].is_some() || gate[c] <= NEGLIGIBLE_GATE);
    let variance = variance_defined.then(|| {
        (0..k)
            .filter_map(|c| per_expert_var[c].map(|v| gate[c] * (v + (per_expert_mean[c] - mean).powi(2))))
            .sum::<f64>()
    });
    Ok(Prediction {
        mean,
        variance,
        variance_defined,
        per_expert_mean,
        gate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// `mean ± width·sd` at every row of the grid `(x, r)`.
pub fn predict_band(x: &DMatrix<f64>, r: &DMatrix<f64>, psi: &ModelParams, width: f64) -> Result<Vec<Band>> {
    if x.nrows() != r.nrows() {
        return Err(Error::Dimension(format!("grid has {} expert rows and {} gating rows", x.nrows(), r.nrows())));
    }
    if !(width >= 0.0) || !width.is_finite() {
        return Err(Error::Domain(format!("band width must be a nonnegative number, got {width}")));
    }
    let mut out = Vec::with_capacity(x.nrows());
    let mut offending = Vec::new();
    for i in 0..x.nrows() {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let ri: Vec<f64> = r.row(i).iter().copied().collect();
        let p = predict(&xi, &ri, psi)?;
        match p.variance {
            Some(v) => {
                let half = width * v.sqrt();
                out.push(Band {
                    mean: p.mean,
                    lower: p.mean - half,
                    upper: p.mean + half,
                });
            }
            None => {
                for (c, e) in psi.experts.iter().enumerate() {
                    if e.nu <= 2.0 && p.gate[c] > NEGLIGIBLE_GATE && !offending.contains(&(c + 1)) {
                        offending.push(c + 1);
                    }
                }
            }
        }
    }
    if !offending.is_empty() {
        offending.sort_unstable();
        return Err(Error::UndefinedMoment(format!(
            "predictive variance does not exist: experts {offending:?} have nu <= 2"
        )));
    }
    Ok(out)
}

/// Index of the largest entry in every row of `tau` (0-based); ties go to the
/// smallest index.
pub fn map_partition(tau: &DMatrix<f64>) -> Vec<usize> {
    (0..tau.nrows())
        .map(|i| {
            let row = tau.row(i);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
