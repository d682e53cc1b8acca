//! C ABI over the inference model and the metric functions.
//!
//! Every function returns a [`TidalStatus`]. On failure, a description is kept
//! per thread and can be read with [`tidal_last_error`]. Models are opaque
//! handles created by [`tidal_model_load`] and released with [`tidal_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use chrono::NaiveDate;
use ndarray::Array2;
use tidal::backtest::max_drawdown;
use tidal::evaluation::{daily_ic, daily_rank_ic};
use tidal::model::{tanimoto, Checkpoint, Model, ModelError, ModelOptions, Variant};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TidalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    Numerical = 5,
    Panic = 6,
}

/// Opaque stateful model.
pub struct TidalModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: TidalStatus, message: impl Into<String>) -> TidalStatus {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guarded(f: impl FnOnce() -> TidalStatus) -> TidalStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(TidalStatus::Panic, "internal panic"))
}

fn model_status(e: ModelError) -> TidalStatus {
    match e {
        ModelError::Degenerate(_) => fail(TidalStatus::Numerical, e.to_string()),
        other => fail(TidalStatus::InvalidArgument, other.to_string()),
    }
}

/// Message for the most recent failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tidal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint file into a new model handle with default options.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tidal_model_load(
    path: *const c_char,
    out: *mut *mut TidalModel,
) -> TidalStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(TidalStatus::NullPointer, "null argument");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(TidalStatus::InvalidArgument, "path is not UTF-8");
        };
        let checkpoint = match Checkpoint::load(Path::new(path)) {
            Ok(c) => c,
            Err(tidal::model::CheckpointError::Io(e)) => {
                return fail(TidalStatus::Io, e.to_string())
            }
            Err(e) => return fail(TidalStatus::BadCheckpoint, e.to_string()),
        };
        let model = Model::new(checkpoint.params, ModelOptions::default());
        *out = Box::into_raw(Box::new(TidalModel { model }));
        TidalStatus::Ok
    })
}

/// Selects the variant (0 full, 1 plain LSTM) and topic lifetime, and resets state.
///
/// # Safety
/// `model` must come from [`tidal_model_load`].
#[no_mangle]
pub unsafe extern "C" fn tidal_model_set_options(
    model: *mut TidalModel,
    variant: i32,
    topics_reinit_daily: bool,
) -> TidalStatus {
    guarded(|| {
        let Some(m) = model.as_mut() else {
            return fail(TidalStatus::NullPointer, "null model");
        };
        let variant = match variant {
            0 => Variant::Full,
            1 => Variant::PlainLstm,
            v => return fail(TidalStatus::InvalidArgument, format!("unknown variant {v}")),
        };
        m.model = Model::new(
            m.model.params().clone(),
            ModelOptions {
                variant,
                topics_reinit_daily,
            },
        );
        TidalStatus::Ok
    })
}

/// Feature count per stock expected by [`tidal_model_step`].
///
/// # Safety
/// `model` must come from [`tidal_model_load`].
#[no_mangle]
pub unsafe extern "C" fn tidal_model_input_size(
    model: *const TidalModel,
    out: *mut usize,
) -> TidalStatus {
    guarded(|| match (model.as_ref(), out.is_null()) {
        (Some(m), false) => {
            *out = m.model.params().input_size;
            TidalStatus::Ok
        }
        _ => fail(TidalStatus::NullPointer, "null argument"),
    })
}

/// Clears the recurrent, topic and expectation state.
///
/// # Safety
/// `model` must come from [`tidal_model_load`].
#[no_mangle]
pub unsafe extern "C" fn tidal_model_reset(model: *mut TidalModel) -> TidalStatus {
    guarded(|| match model.as_mut() {
        Some(m) => {
            m.model.reset();
            TidalStatus::Ok
        }
        None => fail(TidalStatus::NullPointer, "null model"),
    })
}

/// Advances the model one day and writes one prediction per stock.
///
/// `date` is `YYYYMMDD`. `features` holds `n_stocks × input_size` values in row
/// order; `out` receives `n_stocks` predictions.
///
/// # Safety
/// All pointers must be valid for the stated lengths and `stock_ids` must hold
/// `n_stocks` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tidal_model_step(
    model: *mut TidalModel,
    date: i32,
    stock_ids: *const *const c_char,
    n_stocks: usize,
    features: *const f64,
    out: *mut f64,
) -> TidalStatus {
    guarded(|| {
        let Some(m) = model.as_mut() else {
            return fail(TidalStatus::NullPointer, "null model");
        };
        if stock_ids.is_null() || features.is_null() || out.is_null() {
            return fail(TidalStatus::NullPointer, "null argument");
        }
        let Some(date) =
            NaiveDate::from_ymd_opt(date / 10000, (date / 100 % 100) as u32, (date % 100) as u32)
        else {
            return fail(TidalStatus::InvalidArgument, format!("invalid date {date}"));
        };
        let mut ids = Vec::with_capacity(n_stocks);
        for &p in slice::from_raw_parts(stock_ids, n_stocks) {
            if p.is_null() {
                return fail(TidalStatus::NullPointer, "null stock id");
            }
            match CStr::from_ptr(p).to_str() {
                Ok(s) => ids.push(s.to_string()),
                Err(_) => return fail(TidalStatus::InvalidArgument, "stock id is not UTF-8"),
            }
        }
        let width = m.model.params().input_size;
        let values = slice::from_raw_parts(features, n_stocks * width).to_vec();
        let x = Array2::from_shape_vec((n_stocks, width), values).expect("length matches shape");
        match m.model.step(date, &ids, &x) {
            Ok(r) => {
                slice::from_raw_parts_mut(out, n_stocks).copy_from_slice(&r.values);
                TidalStatus::Ok
            }
            Err(e) => model_status(e),
        }
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`tidal_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tidal_model_free(model: *mut TidalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Tanimoto coefficient of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tidal_tanimoto(
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> TidalStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(TidalStatus::NullPointer, "null argument");
        }
        match tanimoto(slice::from_raw_parts(a, len), slice::from_raw_parts(b, len)) {
            Ok(v) => {
                *out = v;
                TidalStatus::Ok
            }
            Err(e) => fail(TidalStatus::Numerical, e.to_string()),
        }
    })
}

unsafe fn correlation(
    f: fn(&[f64], &[f64]) -> Result<f64, tidal::evaluation::EvalError>,
    predicted: *const f64,
    realized: *const f64,
    len: usize,
    out: *mut f64,
) -> TidalStatus {
    guarded(|| {
        if predicted.is_null() || realized.is_null() || out.is_null() {
            return fail(TidalStatus::NullPointer, "null argument");
        }
        match f(
            slice::from_raw_parts(predicted, len),
            slice::from_raw_parts(realized, len),
        ) {
            Ok(v) => {
                *out = v;
                TidalStatus::Ok
            }
            Err(e) => fail(TidalStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Pearson correlation of one day's predictions and realized returns.
///
/// # Safety
/// Both arrays must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tidal_daily_ic(
    predicted: *const f64,
    realized: *const f64,
    len: usize,
    out: *mut f64,
) -> TidalStatus {
    correlation(daily_ic, predicted, realized, len, out)
}

/// Spearman correlation (average ranks for ties).
///
/// # Safety
/// Both arrays must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tidal_rank_ic(
    predicted: *const f64,
    realized: *const f64,
    len: usize,
    out: *mut f64,
) -> TidalStatus {
    correlation(daily_rank_ic, predicted, realized, len, out)
}

/// Maximum drawdown of an equity curve, as a non-positive fraction.
///
/// # Safety
/// `equity` must hold `len` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tidal_max_drawdown(
    equity: *const f64,
    len: usize,
    out: *mut f64,
) -> TidalStatus {
    guarded(|| {
        if equity.is_null() || out.is_null() {
            return fail(TidalStatus::NullPointer, "null argument");
        }
        let curve = slice::from_raw_parts(equity, len);
        if curve.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return fail(
                TidalStatus::InvalidArgument,
                "equity must be positive and finite",
            );
        }
        *out = max_drawdown(curve);
        TidalStatus::Ok
    })
}
