//! C ABI over the stratus library.
//!
//! Every fallible function returns a [`StratusStatus`]; on failure the
//! message is available from [`stratus_last_error`] on the same thread.
//! Handles are opaque and must be released with their `_free` function.
//! Arrays are passed as pointer plus length; feature matrices are row-major
//! `n_rows * n_cols` doubles. Labels are bytes holding 0 or 1.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use stratus::error::Error;
use stratus::features::FeatureTable;
use stratus::forest::{forest_fit, forest_predict_proba, mdi, Forest, ForestConfig};
use stratus::linear::{lr_fit_batch, lr_predict, LinearFitConfig, LinearParams};
use stratus::verify::{self, CalibrationMap};

/// Result codes shared by every function of this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StratusStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Shape = 4,
    GeometryMismatch = 5,
    OutOfCoverage = 6,
    MissingFeature = 7,
    NotConverged = 8,
    Diverged = 9,
    Undefined = 10,
    Unmatched = 11,
    Io = 12,
    Parse = 13,
    Panic = 14,
}

impl From<&Error> for StratusStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::GeometryMismatch(_) => StratusStatus::GeometryMismatch,
            Error::OutOfCoverage(_) => StratusStatus::OutOfCoverage,
            Error::InvalidInput(_) => StratusStatus::InvalidInput,
            Error::Config(_) => StratusStatus::Config,
            Error::MissingFeature { .. } => StratusStatus::MissingFeature,
            Error::Shape(_) => StratusStatus::Shape,
            Error::NotConverged { .. } => StratusStatus::NotConverged,
            Error::Diverged { .. } => StratusStatus::Diverged,
            Error::Undefined(_) => StratusStatus::Undefined,
            Error::Unmatched(_) => StratusStatus::Unmatched,
            Error::Io { .. } => StratusStatus::Io,
            Error::Csv(_) | Error::Parse { .. } => StratusStatus::Parse,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: StratusStatus, msg: impl Into<String>) -> StratusStatus {
    set_error(msg.into());
    status
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), StratusStatus>) -> StratusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StratusStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(StratusStatus::Panic, "internal panic"),
    }
}

fn lib(e: Error) -> StratusStatus {
    let s = StratusStatus::from(&e);
    fail(s, e.to_string())
}

unsafe fn input<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], StratusStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(StratusStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, n))
}

unsafe fn output<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], StratusStatus> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(StratusStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, n))
}

fn check_out<T>(p: *mut T, what: &str) -> Result<(), StratusStatus> {
    if p.is_null() {
        Err(fail(StratusStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn table(data: *const f64, n_rows: usize, n_cols: usize) -> Result<FeatureTable, StratusStatus> {
    let len = n_rows.checked_mul(n_cols).ok_or_else(|| fail(StratusStatus::Shape, "matrix size overflows"))?;
    let values = input(data, len, "data")?;
    let columns = (0..n_cols).map(|j| format!("x{j}")).collect();
    FeatureTable::from_matrix(columns, values.to_vec()).map_err(lib)
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stratus_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stratus_version() -> *const c_char {
    static V: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(c) => c,
        Err(_) => panic!("version string"),
    };
    V.as_ptr()
}

/// Mean squared difference between probabilities and 0/1 labels.
///
/// # Safety
/// `predictions` and `labels` must point to `n` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stratus_brier(predictions: *const f64, labels: *const u8, n: usize, out: *mut f64) -> StratusStatus {
    guard(|| {
        check_out(out, "out")?;
        let b = verify::brier(input(predictions, n, "predictions")?, input(labels, n, "labels")?).map_err(lib)?;
        *out = b;
        Ok(())
    })
}

/// Skill score `1 - model / baseline`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stratus_bss(model_brier: f64, baseline_brier: f64, out: *mut f64) -> StratusStatus {
    guard(|| {
        check_out(out, "out")?;
        *out = verify::bss(model_brier, baseline_brier).map_err(lib)?;
        Ok(())
    })
}

/// Isotonic calibration map.
pub struct StratusCalibration(CalibrationMap);

/// Fit an isotonic map of labels on predictions.
///
/// # Safety
/// Inputs must point to `n` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stratus_calibration_fit(
    predictions: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut *mut StratusCalibration,
) -> StratusStatus {
    guard(|| {
        check_out(out, "out")?;
        let m = verify::pava_fit(input(predictions, n, "predictions")?, input(labels, n, "labels")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(StratusCalibration(m)));
        Ok(())
    })
}

/// Apply a calibration map to `n` probabilities.
///
/// # Safety
/// `map` must come from [`stratus_calibration_fit`]; `input_p` and `output_p` must hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn stratus_calibration_apply(
    map: *const StratusCalibration,
    input_p: *const f64,
    output_p: *mut f64,
    n: usize,
) -> StratusStatus {
    guard(|| {
        let m = map.as_ref().ok_or_else(|| fail(StratusStatus::NullPointer, "map is null"))?;
        let x = input(input_p, n, "input")?;
        let y = output(output_p, n, "output")?;
        y.copy_from_slice(&verify::calibrate(&m.0, x));
        Ok(())
    })
}

/// # Safety
/// `map` must come from [`stratus_calibration_fit`] or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stratus_calibration_free(map: *mut StratusCalibration) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Fitted penalized logistic regression.
pub struct StratusLinearModel(LinearParams);

/// Fit a logistic regression with inverse penalty strength `c` (full batch).
///
/// # Safety
/// `data` must hold `n_rows * n_cols` values, `labels` `n_rows`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stratus_linear_fit(
    data: *const f64,
    labels: *const u8,
    n_rows: usize,
    n_cols: usize,
    c: f64,
    out: *mut *mut StratusLinearModel,
) -> StratusStatus {
    guard(|| {
        check_out(out, "out")?;
        let t = table(data, n_rows, n_cols)?;
        let y = input(labels, n_rows, "labels")?;
        let cfg = LinearFitConfig { c, ..LinearFitConfig::default() };
        let p = lr_fit_batch(&t, y, &cfg).map_err(lib)?;
        *out = Box::into_raw(Box::new(StratusLinearModel(p)));
        Ok(())
    })
}

/// Probabilities for `n_rows` rows.
///
/// # Safety
/// `model` must be a live handle; `data` holds `n_rows * n_cols` values, `out` `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn stratus_linear_predict(
    model: *const StratusLinearModel,
    data: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> StratusStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(StratusStatus::NullPointer, "model is null"))?;
        let t = table(data, n_rows, n_cols)?;
        let p = lr_predict(&m.0, &t).map_err(lib)?;
        output(out, n_rows, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Copy the intercept and `n_cols` coefficients.
///
/// # Safety
/// `model` must be a live handle; `intercept` writable; `coefficients` holds `n_cols` values.
#[no_mangle]
pub unsafe extern "C" fn stratus_linear_coefficients(
    model: *const StratusLinearModel,
    intercept: *mut f64,
    coefficients: *mut f64,
    n_cols: usize,
) -> StratusStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| fail(StratusStatus::NullPointer, "model is null"))?;
        check_out(intercept, "intercept")?;
        if n_cols != m.0.coefficients.len() {
            return Err(fail(StratusStatus::Shape, format!("model has {} coefficients, caller asked for {n_cols}", m.0.coefficients.len())));
        }
        *intercept = m.0.intercept;
        output(coefficients, n_cols, "coefficients")?.copy_from_slice(&m.0.coefficients);
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`stratus_linear_fit`] or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stratus_linear_free(model: *mut StratusLinearModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fitted random forest classifier.
pub struct StratusForest(Forest);

/// Fit a random forest with the default configuration except for the tree
/// count, the per-tree sample count (0 means all rows) and the seed.
///
/// # Safety
/// `data` must hold `n_rows * n_cols` values, `labels` `n_rows`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stratus_forest_fit(
    data: *const f64,
    labels: *const u8,
    n_rows: usize,
    n_cols: usize,
    n_estimators: usize,
    max_samples: usize,
    seed: u64,
    out: *mut *mut StratusForest,
) -> StratusStatus {
    guard(|| {
        check_out(out, "out")?;
        let t = table(data, n_rows, n_cols)?;
        let y = input(labels, n_rows, "labels")?;
        let cfg = ForestConfig { n_estimators, max_samples: (max_samples > 0).then_some(max_samples), seed, ..ForestConfig::default() };
        let f = forest_fit(&t, y, &cfg).map_err(lib)?;
        *out = Box::into_raw(Box::new(StratusForest(f)));
        Ok(())
    })
}

/// Positive-class probabilities for `n_rows` rows.
///
/// # Safety
/// `forest` must be a live handle; `data` holds `n_rows * n_cols` values, `out` `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn stratus_forest_predict(
    forest: *const StratusForest,
    data: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> StratusStatus {
    guard(|| {
        let f = forest.as_ref().ok_or_else(|| fail(StratusStatus::NullPointer, "forest is null"))?;
        let t = table(data, n_rows, n_cols)?;
        let p = forest_predict_proba(&f.0, &t).map_err(lib)?;
        output(out, n_rows, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Mean decrease in impurity per column, normalized to sum 1.
///
/// # Safety
/// `forest` must be a live handle; `out` holds `n_cols` values.
#[no_mangle]
pub unsafe extern "C" fn stratus_forest_mdi(forest: *const StratusForest, out: *mut f64, n_cols: usize) -> StratusStatus {
    guard(|| {
        let f = forest.as_ref().ok_or_else(|| fail(StratusStatus::NullPointer, "forest is null"))?;
        let imp = mdi(&f.0);
        if n_cols != imp.values.len() {
            return Err(fail(StratusStatus::Shape, format!("forest has {} columns, caller asked for {n_cols}", imp.values.len())));
        }
        output(out, n_cols, "out")?.copy_from_slice(&imp.values);
        Ok(())
    })
}

/// # Safety
/// `forest` must come from [`stratus_forest_fit`] or be NULL; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stratus_forest_free(forest: *mut StratusForest) {
    if !forest.is_null() {
        drop(Box::from_raw(forest));
    }
}
