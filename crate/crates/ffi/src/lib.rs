//! C ABI for `stmoe`.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `*_free` function. Every fallible call returns a [`StmoeStatus`];
//! on failure [`stmoe_last_error_message`] describes the error for the
//! calling thread. Matrices are passed row-major.

use nalgebra::{DMatrix, DVector};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use stmoe::dist::{skew_t_pdf, SkewTParams};
use stmoe::ecm::{multi_start_fit, FitConfig};
use stmoe::io::ModelFile;
use stmoe::model::{log_likelihood, Dataset, Family, ModelParams};
use stmoe::predict::predict;
use stmoe::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmoeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerical = 4,
    FitFailed = 5,
    UndefinedMoment = 6,
    Io = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StmoeFamily {
    Normal = 0,
    SkewT = 1,
}

fn family_from_code(code: i32) -> Result<Family, (StmoeStatus, String)> {
    match code {
        c if c == StmoeFamily::Normal as i32 => Ok(Family::Nmoe),
        c if c == StmoeFamily::SkewT as i32 => Ok(Family::Stmoe),
        other => Err((StmoeStatus::InvalidArgument, format!("unknown family code {other}"))),
    }
}

/// Observations `(y, X, R)`.
pub struct StmoeDataset {
    inner: Dataset,
}

/// Model parameters plus, when produced by a fit, its log-likelihood.
pub struct StmoeModel {
    params: ModelParams,
    loglik: f64,
    converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> StmoeStatus {
    match e {
        Error::Domain(_) | Error::InvalidData(_) | Error::Usage(_) | Error::ModelFile(_) | Error::Parse { .. } => {
            StmoeStatus::InvalidArgument
        }
        Error::Dimension(_) | Error::WrongFamily(_) => StmoeStatus::Dimension,
        Error::ZeroDensity { .. } | Error::InvalidBracket { .. } => StmoeStatus::Numerical,
        Error::FitFailed(_) => StmoeStatus::FitFailed,
        Error::UndefinedMoment(_) => StmoeStatus::UndefinedMoment,
        Error::Io { .. } | Error::Csv(_) => StmoeStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status and a message.
fn guard(f: impl FnOnce() -> Result<(), (StmoeStatus, String)>) -> StmoeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StmoeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StmoeStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (StmoeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (StmoeStatus, String) {
    (StmoeStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (StmoeStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, (StmoeStatus, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn stmoe_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stmoe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from `y` (length `n`), `x` (`n × p`) and `r` (`n × q`).
///
/// # Safety
/// Pointers must be valid for the given lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_dataset_new(
    y: *const f64,
    x: *const f64,
    r: *const f64,
    n: usize,
    p: usize,
    q: usize,
    out: *mut *mut StmoeDataset,
) -> StmoeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let y = slice(y, n, "y")?;
        let x = slice(x, n * p, "x")?;
        let r = slice(r, n * q, "r")?;
        let data = Dataset::new(
            DVector::from_column_slice(y),
            DMatrix::from_row_slice(n, p, x),
            DMatrix::from_row_slice(n, q, r),
        )
        .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StmoeDataset { inner: data }));
        Ok(())
    })
}

/// Dataset with `x = r = (1, t)`.
///
/// # Safety
/// `t` and `y` must be valid for `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_dataset_from_scalar(
    t: *const f64,
    y: *const f64,
    n: usize,
    out: *mut *mut StmoeDataset,
) -> StmoeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = Dataset::from_scalar_covariate(slice(t, n, "t")?, slice(y, n, "y")?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StmoeDataset { inner: data }));
        Ok(())
    })
}

/// # Safety
/// `data` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stmoe_dataset_free(data: *mut StmoeDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Multi-start ECM fit with `k` experts. `family` is a [`StmoeFamily`] value;
/// `tol <= 0` and `max_iter == 0` select the defaults.
///
/// # Safety
/// `data` must be a live dataset handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_fit(
    data: *const StmoeDataset,
    family: i32,
    k: usize,
    n_starts: usize,
    seed: u64,
    tol: f64,
    max_iter: usize,
    out: *mut *mut StmoeModel,
) -> StmoeStatus {
    guard(|| {
        let data = handle(data, "data")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let defaults = FitConfig::default();
        let cfg = FitConfig {
            tol: if tol > 0.0 { tol } else { defaults.tol },
            max_iter: if max_iter > 0 { max_iter } else { defaults.max_iter },
            n_starts,
            seed,
            ..defaults
        };
        let fit = multi_start_fit(&data.inner, k, family_from_code(family)?, &cfg).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StmoeModel {
            params: fit.params,
            loglik: fit.loglik,
            converged: fit.converged,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stmoe_model_free(model: *mut StmoeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of experts, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn stmoe_model_k(model: *const StmoeModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.k())
}

/// Log-likelihood reached by the fit (NaN for models loaded from JSON) and
/// whether it converged.
///
/// # Safety
/// `model` must be a live model handle; outputs must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn stmoe_model_fit_info(
    model: *const StmoeModel,
    loglik: *mut f64,
    converged: *mut bool,
) -> StmoeStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if !loglik.is_null() {
            *loglik = m.loglik;
        }
        if !converged.is_null() {
            *converged = m.converged;
        }
        Ok(())
    })
}

/// Observed-data log-likelihood of `data` under `model`.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_model_loglik(
    model: *const StmoeModel,
    data: *const StmoeDataset,
    out: *mut f64,
) -> StmoeStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let d = handle(data, "data")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = log_likelihood(&d.inner, &m.params).map_err(lib_err)?;
        Ok(())
    })
}

/// Predictive mean and variance at one point. `variance` receives NaN when
/// the variance does not exist.
///
/// # Safety
/// `x` must hold `p` values and `r` `q` values; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_model_predict(
    model: *const StmoeModel,
    x: *const f64,
    p: usize,
    r: *const f64,
    q: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> StmoeStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if mean.is_null() || variance.is_null() {
            return Err(null("mean or variance"));
        }
        let pred = predict(slice(x, p, "x")?, slice(r, q, "r")?, &m.params).map_err(lib_err)?;
        *mean = pred.mean;
        *variance = pred.variance.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Serializes the model as JSON into `buf` (NUL-terminated). `needed`
/// receives the byte length including the terminator; when `len` is too
/// small nothing is written and `BufferTooSmall` is returned.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes; `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_model_to_json(
    model: *const StmoeModel,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> StmoeStatus {
    guard(|| {
        let m = handle(model, "model")?;
        if needed.is_null() {
            return Err(null("needed"));
        }
        let text = ModelFile::from_params(&m.params).to_json().map_err(lib_err)?;
        *needed = text.len() + 1;
        if buf.is_null() || len < text.len() + 1 {
            return Err((StmoeStatus::BufferTooSmall, format!("need {} bytes", text.len() + 1)));
        }
        ptr::copy_nonoverlapping(text.as_ptr().cast::<c_char>(), buf, text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Parses a model from a NUL-terminated JSON document.
///
/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_model_from_json(json: *const c_char, out: *mut *mut StmoeModel) -> StmoeStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| (StmoeStatus::InvalidArgument, "json is not UTF-8".to_string()))?;
        let params = ModelFile::from_json(text).and_then(|f| f.to_params()).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(StmoeModel {
            params,
            loglik: f64::NAN,
            converged: false,
        }));
        Ok(())
    })
}

/// Skew-t density at `y`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stmoe_skew_t_pdf(
    y: f64,
    mu: f64,
    sigma2: f64,
    lambda: f64,
    nu: f64,
    out: *mut f64,
) -> StmoeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = SkewTParams::new(mu, sigma2, lambda, nu).map_err(lib_err)?;
        *out = skew_t_pdf(y, &p).map_err(lib_err)?;
        Ok(())
    })
}
