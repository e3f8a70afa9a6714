//! C ABI over `sme-core`.
//!
//! Estimators are opaque heap handles created by `sme_estimator_new` and
//! released with `sme_estimator_free`. Every fallible call returns an
//! [`SmeStatus`]; the message of the last failure on the calling thread is
//! available through `sme_last_error_message`. Matrices are row-major.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use nalgebra::{DMatrix, DVector};
use sme_core::numerics::solve_cubic;
use sme_core::{
    CorrectionCriterion, Error, Estimator, EstimatorConfig, InconsistencyPolicy, Measurement, PredictionCriterion, ProcessModel, SymMatrix,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Inconsistent = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmePrediction {
    Volume = 0,
    Trace = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmeCorrection {
    Sigma = 0,
    Volume = 1,
    Ssal = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmePolicy {
    Skip = 0,
    Abort = 1,
}

/// Opaque estimator handle.
pub struct SmeEstimator {
    inner: Estimator,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> SmeStatus {
    match e {
        Error::InconsistentMeasurement { .. } | Error::NonPositiveScale(_) => SmeStatus::Inconsistent,
        Error::DimensionMismatch(_) | Error::Validation(_) | Error::InvalidBounds { .. } | Error::Parse(_) | Error::Io(_) => {
            SmeStatus::InvalidArgument
        }
        _ => SmeStatus::Numerical,
    }
}

fn guard<F: FnOnce() -> Result<(), (SmeStatus, String)>>(f: F) -> SmeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SmeStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (SmeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SmeStatus, String) {
    (SmeStatus::NullPointer, format!("{what} is null"))
}

/// Borrow `len` doubles; a zero length accepts a null pointer.
unsafe fn doubles<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], (SmeStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

/// Creates an estimator for `E(center, sigma0 · shape)`.
///
/// # Safety
/// `center` must point to `n` doubles, `shape` to `n * n` doubles and `out`
/// to writable storage for one handle pointer.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_new(
    n: usize,
    center: *const f64,
    shape: *const f64,
    sigma0: f64,
    pred: SmePrediction,
    corr: SmeCorrection,
    policy: SmePolicy,
    out: *mut *mut SmeEstimator,
) -> SmeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if n == 0 {
            return Err((SmeStatus::InvalidArgument, "n must be positive".into()));
        }
        let c = doubles(center, n, "center")?;
        let p = doubles(shape, n * n, "shape")?;
        let config = EstimatorConfig {
            pred: match pred {
                SmePrediction::Volume => PredictionCriterion::VolumeMin,
                SmePrediction::Trace => PredictionCriterion::trace(),
            },
            corr: match corr {
                SmeCorrection::Sigma => CorrectionCriterion::SigmaMin,
                SmeCorrection::Volume => CorrectionCriterion::VolumeMin,
                SmeCorrection::Ssal => CorrectionCriterion::SsalMin,
            },
            inconsistency: match policy {
                SmePolicy::Skip => InconsistencyPolicy::Skip,
                SmePolicy::Abort => InconsistencyPolicy::Abort,
            },
            sigma0,
            ..EstimatorConfig::default()
        };
        let est = Estimator::new(config, DVector::from_row_slice(c), SymMatrix::new(DMatrix::from_row_slice(n, n, p))).map_err(core_err)?;
        *out = Box::into_raw(Box::new(SmeEstimator { inner: est }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `handle` must come from `sme_estimator_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_free(handle: *mut SmeEstimator) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// One predict/correct step.
///
/// `a` is `n × n`, `r` is `n × m`, `b` is `n × l`, `tau` has `l` entries.
/// Measurement `i` is `lowers[i] ≤ directions[i, :] · x ≤ uppers[i]`, with
/// `directions` a `p × n` matrix; infinite bounds are allowed.
///
/// # Safety
/// Every pointer must reference at least the number of doubles stated above;
/// pointers paired with a zero length may be null.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_step(
    handle: *mut SmeEstimator,
    a: *const f64,
    r: *const f64,
    m: usize,
    b: *const f64,
    tau: *const f64,
    l: usize,
    directions: *const f64,
    lowers: *const f64,
    uppers: *const f64,
    p: usize,
) -> SmeStatus {
    guard(|| {
        let est = handle.as_mut().ok_or_else(|| null("handle"))?;
        let n = est.inner.ellipsoid().dim();
        let a = doubles(a, n * n, "a")?;
        let r = doubles(r, n * m, "r")?;
        let b = doubles(b, n * l, "b")?;
        let tau = doubles(tau, l, "tau")?;
        let dirs = doubles(directions, p * n, "directions")?;
        let lo = doubles(lowers, p, "lowers")?;
        let hi = doubles(uppers, p, "uppers")?;
        let model = ProcessModel {
            a: DMatrix::from_row_slice(n, n, a),
            b: DMatrix::from_row_slice(n, l, b),
            tau: DVector::from_row_slice(tau),
            r: DMatrix::from_row_slice(n, m, r),
        };
        model.validate(&est.inner.config.tolerances).map_err(core_err)?;
        let ms = (0..p)
            .map(|i| Measurement::new(DVector::from_row_slice(&dirs[i * n..(i + 1) * n]), lo[i], hi[i]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(core_err)?;
        est.inner.step(&model, &ms).map_err(core_err)?;
        Ok(())
    })
}

/// State dimension.
///
/// # Safety
/// `handle` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_dim(handle: *const SmeEstimator, out: *mut usize) -> SmeStatus {
    guard(|| {
        let est = handle.as_ref().ok_or_else(|| null("handle"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = est.inner.ellipsoid().dim();
        Ok(())
    })
}

/// Copies the center into `out` (`len` must be at least `n`).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_center(handle: *const SmeEstimator, out: *mut f64, len: usize) -> SmeStatus {
    guard(|| {
        let est = handle.as_ref().ok_or_else(|| null("handle"))?;
        let c = &est.inner.ellipsoid().center;
        if out.is_null() {
            return Err(null("out"));
        }
        if len < c.len() {
            return Err((SmeStatus::InvalidArgument, format!("buffer holds {len} values, need {}", c.len())));
        }
        slice::from_raw_parts_mut(out, c.len()).copy_from_slice(c.as_slice());
        Ok(())
    })
}

/// Copies the unit-scale shape matrix (row-major, `len ≥ n²`).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_shape(handle: *const SmeEstimator, out: *mut f64, len: usize) -> SmeStatus {
    guard(|| {
        let est = handle.as_ref().ok_or_else(|| null("handle"))?;
        let p = est.inner.ellipsoid().shape.as_matrix();
        let n = p.nrows();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < n * n {
            return Err((SmeStatus::InvalidArgument, format!("buffer holds {len} values, need {}", n * n)));
        }
        let dst = slice::from_raw_parts_mut(out, n * n);
        for i in 0..n {
            for j in 0..n {
                dst[i * n + j] = p[(i, j)];
            }
        }
        Ok(())
    })
}

/// Scale of the stored representation; the set is `E(center, scale · shape)`.
///
/// # Safety
/// `handle` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_scale(handle: *const SmeEstimator, out: *mut f64) -> SmeStatus {
    guard(|| {
        let est = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = est.inner.ellipsoid().scale;
        Ok(())
    })
}

/// Tracked scale `ς_k` of the unnormalised recursion.
///
/// # Safety
/// `handle` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_sigma(handle: *const SmeEstimator, out: *mut f64) -> SmeStatus {
    guard(|| {
        let est = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = est.inner.state.sigma;
        Ok(())
    })
}

/// Tracked rank of the shape matrix.
///
/// # Safety
/// `handle` must be valid and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sme_estimator_rank(handle: *const SmeEstimator, out: *mut usize) -> SmeStatus {
    guard(|| {
        let est = handle.as_ref().ok_or_else(|| null("handle"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = est.inner.ellipsoid().rank;
        Ok(())
    })
}

/// Real roots of `b3 x³ + b2 x² + b1 x + b0`, ascending, into `roots[0..*count]`.
///
/// # Safety
/// `roots` must hold 3 doubles; `count` and `discriminant` must be writable
/// (`discriminant` may be null).
#[no_mangle]
pub unsafe extern "C" fn sme_solve_cubic(
    b3: f64,
    b2: f64,
    b1: f64,
    b0: f64,
    roots: *mut f64,
    count: *mut usize,
    discriminant: *mut f64,
) -> SmeStatus {
    guard(|| {
        if roots.is_null() {
            return Err(null("roots"));
        }
        let count = count.as_mut().ok_or_else(|| null("count"))?;
        let sol = solve_cubic(b3, b2, b1, b0).map_err(core_err)?;
        let dst = slice::from_raw_parts_mut(roots, 3);
        dst[..sol.roots.len()].copy_from_slice(&sol.roots);
        *count = sol.roots.len();
        if let Some(d) = discriminant.as_mut() {
            *d = sol.discriminant;
        }
        Ok(())
    })
}

/// Copies the last error message of this thread, NUL-terminated and
/// truncated to `len`. Returns the full message length plus one.
///
/// # Safety
/// `buf` must hold `len` bytes, or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn sme_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let k = bytes.len().min(len - 1);
            let dst = slice::from_raw_parts_mut(buf as *mut u8, len);
            dst[..k].copy_from_slice(&bytes[..k]);
            dst[k] = 0;
        }
        bytes.len() + 1
    })
}
