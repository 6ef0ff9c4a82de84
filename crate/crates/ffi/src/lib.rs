//! C ABI over the ivmkit learners.
//!
//! Models are opaque `IvmkitModel` handles created by a fit or load call and
//! released with `ivmkit_model_free`. Every fallible function returns an
//! `IvmkitStatus`; on failure `ivmkit_last_error` describes the problem for
//! the calling thread. Matrices are dense, row-major, `n` rows by `d` columns.
//! Labels are 0/1 bytes. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ivmkit::ivm::{self, IvmConfig, SelectionMode};
use ivmkit::model_io::{Learner, TrainedModel};
use ivmkit::svm::{self, SvmConfig};
use ivmkit::{eval, Dataset, Error, FeatureMatrix, KernelSpec};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvmkitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Bad input data: shape, labels, non-finite values.
    DataError = 3,
    /// Singular systems, failed candidates, non-convergence.
    NumericalError = 4,
    IoError = 5,
    /// Malformed model file.
    FormatError = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvmkitKernel {
    Linear = 0,
    Radial = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IvmkitMode {
    /// Exact up to 200 training points, one-step above.
    Auto = 0,
    Exact = 1,
    OneStep = 2,
}

/// Opaque fitted model.
pub struct IvmkitModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IvmkitStatus {
    match e {
        Error::Io(_) => IvmkitStatus::IoError,
        Error::Format { .. } => IvmkitStatus::FormatError,
        Error::InvalidParameter(_) | Error::Config(_) => IvmkitStatus::InvalidArgument,
        Error::Singular { .. }
        | Error::Candidate { .. }
        | Error::AllCandidatesFailed(_)
        | Error::NotConverged(_) => IvmkitStatus::NumericalError,
        _ => IvmkitStatus::DataError,
    }
}

/// Runs `f`, recording any error or panic for `ivmkit_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (IvmkitStatus, String)>) -> IvmkitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IvmkitStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            IvmkitStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (IvmkitStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (IvmkitStatus, String) {
    (IvmkitStatus::NullPointer, format!("{what} is null"))
}

unsafe fn matrix(x: *const f64, n: usize, d: usize) -> Result<FeatureMatrix, (IvmkitStatus, String)> {
    if x.is_null() {
        return Err(null("x"));
    }
    let len = n
        .checked_mul(d)
        .ok_or((IvmkitStatus::InvalidArgument, "n * d overflows".to_string()))?;
    let values = std::slice::from_raw_parts(x, len).to_vec();
    FeatureMatrix::new(n, d, values).map_err(lib_err)
}

unsafe fn dataset(x: *const f64, y: *const u8, n: usize, d: usize) -> Result<Dataset, (IvmkitStatus, String)> {
    let m = matrix(x, n, d)?;
    if y.is_null() {
        return Err(null("y"));
    }
    let labels = std::slice::from_raw_parts(y, n).to_vec();
    Dataset::new(m, labels).map_err(lib_err)
}

fn kernel(kind: IvmkitKernel, gamma: f64) -> Result<KernelSpec, (IvmkitStatus, String)> {
    match kind {
        IvmkitKernel::Linear => Ok(KernelSpec::linear()),
        IvmkitKernel::Radial => KernelSpec::radial(gamma).map_err(lib_err),
    }
}

fn emit(model: TrainedModel, out: *mut *mut IvmkitModel) {
    let boxed = Box::new(IvmkitModel { inner: model });
    // SAFETY: callers check `out` for null first.
    unsafe { *out = Box::into_raw(boxed) };
}

/// Fits an import vector machine. `gamma` is ignored for the linear kernel.
/// `max_import` of 0 means no cap. On success `*out` owns a new model.
///
/// # Safety
/// `x` must point to `n * d` doubles, `y` to `n` bytes, `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ivmkit_fit_ivm(
    x: *const f64,
    y: *const u8,
    n: usize,
    d: usize,
    kernel_kind: IvmkitKernel,
    gamma: f64,
    lambda: f64,
    mode: IvmkitMode,
    conv_tol: f64,
    max_import: usize,
    out: *mut *mut IvmkitModel,
) -> IvmkitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = dataset(x, y, n, d)?;
        let mut cfg = IvmConfig::new(kernel(kernel_kind, gamma)?, lambda).with_auto_mode(n);
        match mode {
            IvmkitMode::Auto => {}
            IvmkitMode::Exact => cfg.selection_mode = SelectionMode::Exact,
            IvmkitMode::OneStep => cfg.selection_mode = SelectionMode::OneStep,
        }
        cfg.conv_tol = conv_tol;
        cfg.max_import = (max_import > 0).then_some(max_import);
        let model = ivm::fit_ivm(&data, &cfg).map_err(lib_err)?;
        emit(
            TrainedModel {
                learner: Learner::Ivm(model),
                features: Vec::new(),
                scaler: None,
            },
            out,
        );
        Ok(())
    })
}

/// Fits a C-SVM with SMO. `gamma` is ignored for the linear kernel.
///
/// # Safety
/// As for [`ivmkit_fit_ivm`].
#[no_mangle]
pub unsafe extern "C" fn ivmkit_fit_svm(
    x: *const f64,
    y: *const u8,
    n: usize,
    d: usize,
    kernel_kind: IvmkitKernel,
    gamma: f64,
    cost: f64,
    out: *mut *mut IvmkitModel,
) -> IvmkitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let data = dataset(x, y, n, d)?;
        let cfg = SvmConfig::new(kernel(kernel_kind, gamma)?, cost);
        let model = svm::fit_svm(&data, &cfg).map_err(lib_err)?;
        emit(
            TrainedModel {
                learner: Learner::Svm(model),
                features: Vec::new(),
                scaler: None,
            },
            out,
        );
        Ok(())
    })
}

/// Scores `n` rows: probabilities for an IVM, decision values for an SVM.
///
/// # Safety
/// `model` must come from this library; `x` must hold `n * d` doubles and
/// `scores` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn ivmkit_predict(
    model: *const IvmkitModel,
    x: *const f64,
    n: usize,
    d: usize,
    scores: *mut f64,
) -> IvmkitStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if scores.is_null() {
            return Err(null("scores"));
        }
        let m = matrix(x, n, d)?;
        let s = model.inner.score_all(&m).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(scores, n).copy_from_slice(&s);
        Ok(())
    })
}

/// Import vectors (IVM) or support vectors (SVM).
///
/// # Safety
/// `model` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ivmkit_model_n_vectors(model: *const IvmkitModel, out: *mut usize) -> IvmkitStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.inner.n_vectors();
        Ok(())
    })
}

/// Input dimension the model expects.
///
/// # Safety
/// As for [`ivmkit_model_n_vectors`].
#[no_mangle]
pub unsafe extern "C" fn ivmkit_model_dim(model: *const IvmkitModel, out: *mut usize) -> IvmkitStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = model.inner.dim();
        Ok(())
    })
}

/// 1 for an IVM, 0 for an SVM.
///
/// # Safety
/// As for [`ivmkit_model_n_vectors`].
#[no_mangle]
pub unsafe extern "C" fn ivmkit_model_is_ivm(model: *const IvmkitModel, out: *mut i32) -> IvmkitStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = i32::from(matches!(model.inner.learner, Learner::Ivm(_)));
        Ok(())
    })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, (IvmkitStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| (IvmkitStatus::InvalidArgument, "path is not UTF-8".to_string()))
}

/// Writes the model in the ivmkit text format.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ivmkit_model_save(model: *const IvmkitModel, path: *const c_char) -> IvmkitStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        model.inner.save(path_arg(path)?).map_err(lib_err)
    })
}

/// Reads a model written by `ivmkit_model_save` or the `ivmkit` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ivmkit_model_load(path: *const c_char, out: *mut *mut IvmkitModel) -> IvmkitStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = TrainedModel::load(path_arg(path)?).map_err(lib_err)?;
        emit(m, out);
        Ok(())
    })
}

/// Releases a model; null is a no-op.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ivmkit_model_free(model: *mut IvmkitModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Area under the ROC curve of `scores` against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ivmkit_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> IvmkitStatus {
    guard(|| {
        if scores.is_null() {
            return Err(null("scores"));
        }
        if labels.is_null() {
            return Err(null("labels"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = std::slice::from_raw_parts(scores, n);
        let l = std::slice::from_raw_parts(labels, n);
        *out = eval::auc(s, l).map_err(lib_err)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ivmkit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ivmkit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
