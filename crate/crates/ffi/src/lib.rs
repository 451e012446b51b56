//! C ABI over the `latkd` crate: scoring stored models, AUPRC and the
//! distillation loss.
//!
//! Every fallible function returns a [`LatkdStatus`]. On failure the message
//! is kept per thread and can be read with [`latkd_last_error_message`].
//! Matrices are dense, row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use latkd::eval::average_precision;
use latkd::mlp::{composite_loss, CompositeLossSpec};
use latkd::model::{positive_scores, Model, Scorer};
use latkd::registry::BlobStore;
use latkd::LatkdError;
use ndarray::{Array2, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatkdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    UndefinedMetric = 6,
    Integrity = 7,
    Panic = 8,
}

/// Opaque handle to a loaded model.
pub struct LatkdModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|&b| b != 0);
    let c = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &LatkdError) -> LatkdStatus {
    match e.kind() {
        "missing_file" | "io" | "empty_file" | "locked" => LatkdStatus::Io,
        "json" | "malformed" | "format_version" | "csv" => LatkdStatus::Format,
        "dimension_mismatch" | "row_mismatch" => LatkdStatus::DimensionMismatch,
        "no_positives" | "zero_baseline" => LatkdStatus::UndefinedMetric,
        "integrity" | "unknown_hash" => LatkdStatus::Integrity,
        _ => LatkdStatus::InvalidArgument,
    }
}

struct Failure(LatkdStatus, String);

impl From<LatkdError> for Failure {
    fn from(e: LatkdError) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LatkdStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, records any failure and converts panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LatkdStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LatkdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            LatkdStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| Failure(LatkdStatus::InvalidArgument, format!("`{what}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn checked_len(a: usize, b: usize) -> Result<usize, Failure> {
    a.checked_mul(b)
        .ok_or_else(|| Failure(LatkdStatus::InvalidArgument, "matrix size overflows".into()))
}

unsafe fn store_model(model: Model, out: *mut *mut LatkdModel) {
    *out = Box::into_raw(Box::new(LatkdModel { inner: model }));
}

/// Loads a model from a portable JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer. On
/// success `*out` owns a handle that must be released with [`latkd_model_free`].
#[no_mangle]
pub unsafe extern "C" fn latkd_model_load_file(path: *const c_char, out: *mut *mut LatkdModel) -> LatkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let model = Model::load_file(Path::new(path))?;
        store_model(model, out);
        Ok(())
    })
}

/// Loads a model from a run's blob store (`<run>/objects`) by content hash.
///
/// # Safety
/// `store_root` and `hash` must be NUL-terminated strings and `out` a writable
/// pointer. On success `*out` must be released with [`latkd_model_free`].
#[no_mangle]
pub unsafe extern "C" fn latkd_model_load_blob(
    store_root: *const c_char,
    hash: *const c_char,
    out: *mut *mut LatkdModel,
) -> LatkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let root = str_arg(store_root, "store_root")?;
        let hash = str_arg(hash, "hash")?;
        let model = Model::load(&BlobStore::new(root), hash)?;
        store_model(model, out);
        Ok(())
    })
}

/// Number of features the model expects per row.
///
/// # Safety
/// `model` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn latkd_model_input_dim(model: *const LatkdModel, out: *mut usize) -> LatkdStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = model.inner.input_dim();
        Ok(())
    })
}

/// Positive-class probabilities for `n_rows` rows of `n_cols` features.
///
/// # Safety
/// `features` must hold `n_rows * n_cols` doubles and `out_scores` room for
/// `n_rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn latkd_model_score(
    model: *const LatkdModel,
    features: *const f64,
    n_rows: usize,
    n_cols: usize,
    out_scores: *mut f64,
) -> LatkdStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if n_rows > 0 && out_scores.is_null() {
            return Err(null("out_scores"));
        }
        let data = slice_arg(features, checked_len(n_rows, n_cols)?, "features")?;
        let view = ArrayView2::from_shape((n_rows, n_cols), data)
            .map_err(|e| Failure(LatkdStatus::InvalidArgument, e.to_string()))?;
        let scores = positive_scores(&model.inner, view)?;
        if n_rows > 0 {
            std::slice::from_raw_parts_mut(out_scores, n_rows).copy_from_slice(&scores);
        }
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn latkd_model_free(model: *mut LatkdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Area under the precision-recall curve (average precision) of `scores`
/// against 0/1 `labels`.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn latkd_auprc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> LatkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scores = slice_arg(scores, n, "scores")?;
        let labels = slice_arg(labels, n, "labels")?;
        *out = average_precision(scores, labels)?;
        Ok(())
    })
}

/// Mean over rows of `CE(label, p) + kl_weight * sum_i T^2 KL(q_i || p)` for
/// two-class distributions.
///
/// `predictions` is `n × 2`; `teachers` holds `n_teachers` consecutive `n × 2`
/// blocks and may be null when `n_teachers` is 0.
///
/// # Safety
/// All arrays must have the documented lengths and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn latkd_composite_loss(
    predictions: *const f64,
    labels: *const u8,
    n: usize,
    teachers: *const f64,
    n_teachers: usize,
    kl_weight: f64,
    temperature: f64,
    out: *mut f64,
) -> LatkdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let block = checked_len(n, 2)?;
        let preds = slice_arg(predictions, block, "predictions")?;
        let labels = slice_arg(labels, n, "labels")?;
        let all = slice_arg(teachers, checked_len(block, n_teachers)?, "teachers")?;
        let shaped = |s: &[f64]| {
            Array2::from_shape_vec((n, 2), s.to_vec()).map_err(|e| Failure(LatkdStatus::InvalidArgument, e.to_string()))
        };
        let spec = if n_teachers == 0 {
            CompositeLossSpec::hard_labels_only()
        } else {
            let outputs = all.chunks(block).map(shaped).collect::<Result<Vec<_>, _>>()?;
            CompositeLossSpec::with_teachers(outputs, kl_weight, temperature)
        };
        let p = shaped(preds)?;
        *out = composite_loss(p.view(), labels, &spec)?;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn latkd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn latkd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
