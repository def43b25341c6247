//! C interface to `sqdm-gp`.
//!
//! Every function returns an [`SqdmStatus`]; on failure the message is kept
//! per thread and read back with [`sqdm_last_error`]. Objects are opaque
//! handles created by `*_new`/`*_fit`/`*_run` and released with the
//! matching `*_free`, which accepts NULL. Points are passed as interleaved
//! `x0, y0, x1, y1, ...` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::DMatrix;
use sqdm_gp::control::{run_scan, ModelKind, ScanConfig};
use sqdm_gp::grid::{mse, mse_rows, Point, Polarity, ScanResult};
use sqdm_gp::kernels::{Extras, HyperParams, KernelKind};
use sqdm_gp::model::{Fitted, Method};
use sqdm_gp::plant::{make_phantom, Phantom, PhantomKind};
use sqdm_gp::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    NotPositiveDefinite = 4,
    NotAGrid = 5,
    Parse = 6,
    Io = 7,
    Internal = 8,
}

/// Inference method for [`sqdm_model_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqdmMethod {
    /// Exact GP, isotropic squared exponential (one length).
    ExactIso = 0,
    /// Exact GP, one length per axis.
    ExactArd = 1,
    /// FITC, isotropic kernel; extras are the inducing inputs.
    Fitc = 2,
    /// Sparse spectrum; extras are the spectral points.
    Ssgpr = 3,
    /// Kronecker inference on a full grid, one length per axis.
    Kronecker = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqdmPolarity {
    Negative = 0,
    Positive = 1,
}

/// Opaque fitted model.
pub struct SqdmModel(Fitted);

/// Opaque phantom.
pub struct SqdmPhantom(Phantom);

/// Opaque scan outcome.
pub struct SqdmScanResult {
    result: ScanResult,
    polarity: Polarity,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs were replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SqdmStatus {
    match e {
        Error::Dimension(_) => SqdmStatus::Dimension,
        Error::InvalidArgument(_) | Error::Unfitted | Error::InitialPoint(_) => SqdmStatus::InvalidArgument,
        Error::NotPositiveDefinite { .. } => SqdmStatus::NotPositiveDefinite,
        Error::NotAGrid(_) => SqdmStatus::NotAGrid,
        Error::Parse { .. } => SqdmStatus::Parse,
        Error::Io(_) => SqdmStatus::Io,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SqdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SqdmStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is NULL"));
            SqdmStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            SqdmStatus::Internal
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Lib(Error::InvalidArgument(format!("{what} is not UTF-8"))))
}

fn points(xy: &[f64]) -> Vec<Point> {
    xy.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
}

fn polarity(p: SqdmPolarity) -> Polarity {
    match p {
        SqdmPolarity::Negative => Polarity::Negative,
        SqdmPolarity::Positive => Polarity::Positive,
    }
}

fn copy_matrix(m: &DMatrix<f64>, dst: &mut [f64]) -> Result<(), Fail> {
    if dst.len() != m.len() {
        return Err(Error::Dimension(format!("buffer holds {} values, need {}", dst.len(), m.len())).into());
    }
    for (k, v) in dst.iter_mut().enumerate() {
        *v = m[(k / m.ncols(), k % m.ncols())];
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn sqdm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fits a GP at fixed hyperparameters.
///
/// `lengths` holds 1 (isotropic) or 2 (per-axis) length scales. `extras`
/// holds `n_extras` points: inducing inputs for FITC, spectral points for
/// SSGPR; ignored otherwise. `inputs` holds `n` points, `targets` `n`
/// values.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_model_fit(
    method: SqdmMethod,
    mean: f64,
    sigma_f: f64,
    lengths: *const f64,
    n_lengths: usize,
    sigma_n: f64,
    extras: *const f64,
    n_extras: usize,
    inputs: *const f64,
    targets: *const f64,
    n: usize,
    out_model: *mut *mut SqdmModel,
) -> SqdmStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        let lengths = slice(lengths, n_lengths, "lengths")?;
        let wanted = match method {
            SqdmMethod::ExactArd | SqdmMethod::Kronecker => 2,
            _ => 1,
        };
        if lengths.len() != wanted {
            return Err(Error::InvalidArgument(format!("{method:?} takes {wanted} length scale(s)")).into());
        }
        if !(sigma_f > 0.0 && sigma_n > 0.0 && lengths.iter().all(|l| *l > 0.0)) {
            return Err(Error::InvalidArgument("sigma_f, sigma_n and lengths must be positive".into()).into());
        }
        let extras = points(slice(extras, 2 * n_extras, "extras")?);
        let x = points(slice(inputs, 2 * n, "inputs")?);
        let y = slice(targets, n, "targets")?;
        let h = HyperParams::new(mean, sigma_f, lengths, sigma_n);
        let (m, h) = match method {
            SqdmMethod::ExactIso => (Method::Exact(KernelKind::SeIso), h),
            SqdmMethod::ExactArd => (Method::Exact(KernelKind::SeArd), h),
            SqdmMethod::Fitc => (Method::Fitc(KernelKind::SeIso), h.with_extras(Extras::Inducing(extras))),
            SqdmMethod::Ssgpr => (Method::Ssgpr, h.with_extras(Extras::Spectral(extras))),
            SqdmMethod::Kronecker => (Method::Kronecker, h),
        };
        let fitted = m.fit(&h, &x, y)?;
        *slot = Box::into_raw(Box::new(SqdmModel(fitted)));
        Ok(())
    })
}

/// Latent mean and variance at `n` test points.
///
/// # Safety
/// `model` must come from [`sqdm_model_fit`]; buffers hold `n` values
/// (`2n` for `test`). `var_out` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn sqdm_model_predict(
    model: *const SqdmModel,
    test: *const f64,
    n: usize,
    mean_out: *mut f64,
    var_out: *mut f64,
) -> SqdmStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let t = points(slice(test, 2 * n, "test")?);
        let mean_out = slice_mut(mean_out, n, "mean_out")?;
        let (mean, var) = m.0.predict_marginals(&t)?;
        mean_out.copy_from_slice(mean.as_slice());
        if !var_out.is_null() {
            slice_mut(var_out, n, "var_out")?.copy_from_slice(var.as_slice());
        }
        Ok(())
    })
}

/// Log marginal likelihood of the training targets.
///
/// # Safety
/// `model` from [`sqdm_model_fit`]; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_model_log_likelihood(model: *const SqdmModel, out_value: *mut f64) -> SqdmStatus {
    guard(|| {
        let m = reference(model, "model")?;
        *out(out_value, "out_value")? = m.0.log_likelihood();
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or come from [`sqdm_model_fit`], and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn sqdm_model_free(model: *mut SqdmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Generates a phantom. `kind` is 0 for the 63x63 R1-like map, 1 for the
/// 200x200 R2-like map.
///
/// # Safety
/// `out_phantom` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_phantom_new(kind: u32, seed: u64, out_phantom: *mut *mut SqdmPhantom) -> SqdmStatus {
    guard(|| {
        let slot = out(out_phantom, "out_phantom")?;
        *slot = ptr::null_mut();
        let kind = match kind {
            0 => PhantomKind::R1Like,
            1 => PhantomKind::R2Like,
            k => return Err(Error::InvalidArgument(format!("unknown phantom kind {k}")).into()),
        };
        *slot = Box::into_raw(Box::new(SqdmPhantom(make_phantom(kind, None, seed))));
        Ok(())
    })
}

/// Loads a phantom directory written by `sqdm-gp phantom` or
/// [`sqdm_phantom_save`].
///
/// # Safety
/// `dir` is a NUL-terminated path; `out_phantom` writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_phantom_load(dir: *const c_char, out_phantom: *mut *mut SqdmPhantom) -> SqdmStatus {
    guard(|| {
        let slot = out(out_phantom, "out_phantom")?;
        *slot = ptr::null_mut();
        let dir = str_arg(dir, "dir")?;
        *slot = Box::into_raw(Box::new(SqdmPhantom(Phantom::load(Path::new(dir))?)));
        Ok(())
    })
}

/// # Safety
/// `phantom` valid; `dir` a NUL-terminated path to an existing directory.
#[no_mangle]
pub unsafe extern "C" fn sqdm_phantom_save(phantom: *const SqdmPhantom, dir: *const c_char) -> SqdmStatus {
    guard(|| {
        let p = reference(phantom, "phantom")?;
        let dir = str_arg(dir, "dir")?;
        p.0.save(Path::new(dir))?;
        Ok(())
    })
}

/// Map size in pixels.
///
/// # Safety
/// `phantom` valid; `nx` and `ny` writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_phantom_size(phantom: *const SqdmPhantom, nx: *mut usize, ny: *mut usize) -> SqdmStatus {
    guard(|| {
        let p = reference(phantom, "phantom")?;
        *out(nx, "nx")? = p.0.grid.nx;
        *out(ny, "ny")? = p.0.grid.ny;
        Ok(())
    })
}

/// Copies a ground-truth map, row-major (`ny` rows of `nx`), into `buf`.
///
/// # Safety
/// `phantom` valid; `buf` holds `len` values, `len == nx * ny`.
#[no_mangle]
pub unsafe extern "C" fn sqdm_phantom_map(
    phantom: *const SqdmPhantom,
    polarity: SqdmPolarity,
    buf: *mut f64,
    len: usize,
) -> SqdmStatus {
    guard(|| {
        let p = reference(phantom, "phantom")?;
        copy_matrix(p.0.map(self::polarity(polarity)), slice_mut(buf, len, "buf")?)
    })
}

/// # Safety
/// `phantom` NULL or from a `sqdm_phantom_*` constructor, unused afterwards.
#[no_mangle]
pub unsafe extern "C" fn sqdm_phantom_free(phantom: *mut SqdmPhantom) {
    if !phantom.is_null() {
        drop(Box::from_raw(phantom));
    }
}

/// Simulates a closed-loop scan. `model` names the feedforward: feedback,
/// none, sod-sw, sod-egp, sod-cluster, kronecker, fitc, ssgpr or oracle.
/// A lost lock is reported through [`sqdm_scan_result_aborted`], not as an
/// error.
///
/// # Safety
/// `phantom` valid; `model` NUL-terminated; `out_result` writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_scan_run(
    phantom: *const SqdmPhantom,
    model: *const c_char,
    polarity: SqdmPolarity,
    total_time_s: f64,
    seed: u64,
    out_result: *mut *mut SqdmScanResult,
) -> SqdmStatus {
    guard(|| {
        let slot = out(out_result, "out_result")?;
        *slot = ptr::null_mut();
        let p = reference(phantom, "phantom")?;
        let name = str_arg(model, "model")?;
        let kind = ModelKind::parse(name).ok_or_else(|| Error::InvalidArgument(format!("unknown model '{name}'")))?;
        let pol = self::polarity(polarity);
        let cfg = ScanConfig::new(total_time_s, pol, kind);
        let result = run_scan(&p.0, &cfg, seed)?;
        *slot = Box::into_raw(Box::new(SqdmScanResult { result, polarity: pol }));
        Ok(())
    })
}

/// Line at which the lock was lost, or -1 for a complete scan.
///
/// # Safety
/// `result` valid; `line` writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_scan_result_aborted(result: *const SqdmScanResult, line: *mut i64) -> SqdmStatus {
    guard(|| {
        let r = reference(result, "result")?;
        *out(line, "line")? = r.result.aborted.map_or(-1, |j| j as i64);
        Ok(())
    })
}

/// Copies the tracked image, row-major; unscanned lines are NaN.
///
/// # Safety
/// `result` valid; `buf` holds `len == nx * ny` values.
#[no_mangle]
pub unsafe extern "C" fn sqdm_scan_result_image(
    result: *const SqdmScanResult,
    buf: *mut f64,
    len: usize,
) -> SqdmStatus {
    guard(|| {
        let r = reference(result, "result")?;
        copy_matrix(&r.result.image, slice_mut(buf, len, "buf")?)
    })
}

/// MSE of the completed lines against the phantom the scan ran on.
///
/// # Safety
/// `result` and `phantom` valid; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_scan_result_mse(
    result: *const SqdmScanResult,
    phantom: *const SqdmPhantom,
    out_value: *mut f64,
) -> SqdmStatus {
    guard(|| {
        let r = reference(result, "result")?;
        let p = reference(phantom, "phantom")?;
        let rows = r.result.completed_lines();
        if rows == 0 {
            return Err(Error::InvalidArgument("no line was completed".into()).into());
        }
        *out(out_value, "out_value")? = mse_rows(&r.result.image, p.0.map(r.polarity), rows)?;
        Ok(())
    })
}

/// # Safety
/// `result` NULL or from [`sqdm_scan_run`], unused afterwards.
#[no_mangle]
pub unsafe extern "C" fn sqdm_scan_result_free(result: *mut SqdmScanResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Mean squared difference of two `len`-element arrays.
///
/// # Safety
/// `a` and `b` hold `len` values; `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn sqdm_mse(a: *const f64, b: *const f64, len: usize, out_value: *mut f64) -> SqdmStatus {
    guard(|| {
        let a = slice(a, len, "a")?;
        let b = slice(b, len, "b")?;
        let ma = DMatrix::from_row_slice(1, len, a);
        let mb = DMatrix::from_row_slice(1, len, b);
        *out(out_value, "out_value")? = mse(&ma, &mb)?;
        Ok(())
    })
}
