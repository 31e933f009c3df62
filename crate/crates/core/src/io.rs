//! CSV ingestion and output, and the JSON model file.

use crate::ecm::FittedModel;
use crate::error::{Error, Result};
use crate::model::{Constraints, Dataset, ExpertParams, Family, GatingParams, ModelParams};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Column layout of a data file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub response: String,
    pub covariates: Vec<String>,
    /// Gating covariates; `None` reuses the expert covariates.
    pub gating: Option<Vec<String>>,
    /// Prepend a column of ones to both designs.
    pub intercept: bool,
}

impl Schema {
    pub fn new(response: impl Into<String>, covariates: Vec<String>) -> Self {
        Schema {
            response: response.into(),
            covariates,
            gating: None,
            intercept: true,
        }
    }

    pub fn gating_columns(&self) -> &[String] {
        self.gating.as_deref().unwrap_or(&self.covariates)
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

/// Header and raw records of a CSV file.
struct Table {
    path: String,
    headers: Vec<String>,
    records: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let file = File::open(path).map_err(|e| Error::io(display(path), e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let records = rdr.records().collect::<std::result::Result<Vec<_>, _>>()?;
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::InvalidData(format!("{}: missing header row", display(path))));
        }
        if records.is_empty() {
            return Err(Error::InvalidData(format!("{}: no data rows", display(path))));
        }
        Ok(Table {
            path: display(path),
            headers,
            records,
        })
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidData(format!(
                "{}: no column named '{name}' (found {})",
                self.path,
                self.headers.join(", ")
            ))
        })
    }

    /// Values of the named column. Rows are reported 1-based, counting data rows only.
    fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self.column_index(name)?;
        self.records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let cell = rec.get(j).unwrap_or("");
                let parsed: f64 = cell.parse().map_err(|_| Error::Parse {
                    path: self.path.clone(),
                    row: i + 1,
                    column: name.to_string(),
                    msg: format!("'{cell}' is not a number"),
                })?;
                if !parsed.is_finite() {
                    return Err(Error::Parse {
                        path: self.path.clone(),
                        row: i + 1,
                        column: name.to_string(),
                        msg: format!("'{cell}' is not finite"),
                    });
                }
                Ok(parsed)
            })
            .collect()
    }

    fn design(&self, columns: &[String], intercept: bool) -> Result<DMatrix<f64>> {
        let cols = columns.iter().map(|c| self.column(c)).collect::<Result<Vec<_>>>()?;
        let offset = usize::from(intercept);
        let width = cols.len() + offset;
        if width == 0 {
            return Err(Error::InvalidData(format!("{}: a design needs at least one column", self.path)));
        }
        Ok(DMatrix::from_fn(self.records.len(), width, |i, j| {
            if j < offset {
                1.0
            } else {
                cols[j - offset][i]
            }
        }))
    }
}

/// Reads a dataset laid out by `schema`.
pub fn read_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let table = Table::read(path.as_ref())?;
    let y = DVector::from_vec(table.column(&schema.response)?);
    let x = table.design(&schema.covariates, schema.intercept)?;
    let r = table.design(schema.gating_columns(), schema.intercept)?;
    Dataset::new(y, x, r)
}

/// Reads only the expert and gating designs of `schema` (no response).
pub fn read_designs(path: impl AsRef<Path>, schema: &Schema) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let table = Table::read(path.as_ref())?;
    Ok((
        table.design(&schema.covariates, schema.intercept)?,
        table.design(schema.gating_columns(), schema.intercept)?,
    ))
}

/// Writes a CSV with a header row.
pub fn write_csv(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(display(path), e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(display(path), e))?;
    Ok(())
}

/// Shortest round-trip decimal, with an exponent for very large or small
/// magnitudes. The separator is always '.'.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRecord {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// `null` for normal experts.
    pub lambda: Option<f64>,
    /// `null` for normal experts.
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub loglik: f64,
    pub n_iter: usize,
    pub converged: bool,
    pub seed: u64,
}

/// On-disk representation of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub family: String,
    pub k: usize,
    pub p: usize,
    pub q: usize,
    /// `K-1` rows of `q` gate coefficients; the last component's row is zero.
    pub gating: Vec<Vec<f64>>,
    pub experts: Vec<ExpertRecord>,
    pub fix_lambda_zero: bool,
    pub fix_nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<Schema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitMetadata>,
}

impl ModelFile {
    pub fn from_params(psi: &ModelParams) -> ModelFile {
        let stmoe = psi.family == Family::Stmoe;
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            family: psi.family.name().to_string(),
            k: psi.k(),
            p: psi.p(),
            q: psi.q(),
            gating: psi.gating.alpha.row_iter().map(|r| r.iter().copied().collect()).collect(),
            experts: psi
                .experts
                .iter()
                .map(|e| ExpertRecord {
                    beta: e.beta.iter().copied().collect(),
                    sigma2: e.sigma2,
                    lambda: stmoe.then_some(e.lambda),
                    nu: stmoe.then_some(e.nu),
                })
                .collect(),
            fix_lambda_zero: psi.constraints.fix_lambda_zero,
            fix_nu: psi.constraints.fix_nu,
            schema: None,
            fit: None,
        }
    }

    pub fn from_fit(fit: &FittedModel, schema: Option<Schema>) -> ModelFile {
        ModelFile {
            schema,
            fit: Some(FitMetadata {
                loglik: fit.loglik,
                n_iter: fit.n_iter,
                converged: fit.converged,
                seed: fit.seed,
            }),
            ..ModelFile::from_params(&fit.params)
        }
    }

    pub fn to_params(&self) -> Result<ModelParams> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFile(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                self.format_version
            )));
        }
        let family = Family::parse(&self.family)?;
        if self.k == 0 || self.experts.len() != self.k || self.gating.len() + 1 != self.k {
            return Err(Error::ModelFile(format!(
                "K = {} but {} experts and {} gating rows",
                self.k,
                self.experts.len(),
                self.gating.len()
            )));
        }
        if self.gating.iter().any(|r| r.len() != self.q) {
            return Err(Error::ModelFile(format!("every gating row must have q = {} entries", self.q)));
        }
        let alpha = DMatrix::from_fn(self.k - 1, self.q, |i, j| self.gating[i][j]);
        let gating = if self.k == 1 {
            GatingParams::zeros(1, self.q)
        } else {
            GatingParams::new(alpha)?
        };
        let experts = self
            .experts
            .iter()
            .enumerate()
            .map(|(k, e)| {
                if e.beta.len() != self.p {
                    return Err(Error::ModelFile(format!("expert {} has {} coefficients, p = {}", k + 1, e.beta.len(), self.p)));
                }
                let beta = DVector::from_column_slice(&e.beta);
                match family {
                    Family::Nmoe => Ok(ExpertParams::normal(beta, e.sigma2)),
                    Family::Stmoe => match (e.lambda, e.nu) {
                        (Some(l), Some(nu)) => Ok(ExpertParams::skew_t(beta, e.sigma2, l, nu)),
                        _ => Err(Error::ModelFile(format!("skew-t expert {} needs lambda and nu", k + 1))),
                    },
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let constraints = Constraints {
            fix_lambda_zero: self.fix_lambda_zero,
            fix_nu: self.fix_nu,
        };
        ModelParams::new(family, gating, experts, constraints).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<ModelFile> {
        serde_json::from_str(s).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = File::create(path).map_err(|e| Error::io(display(path), e))?;
        let mut text = self.to_json()?;
        text.push('\n');
        f.write_all(text.as_bytes()).map_err(|e| Error::io(display(path), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ModelFile> {
        let path = path.as_ref();
        let mut s = String::new();
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut s))
            .map_err(|e| Error::io(display(path), e))?;
        ModelFile::from_json(&s).map_err(|e| Error::ModelFile(format!("{}: {e}", display(path))))
    }
}
