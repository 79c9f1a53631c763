//! C ABI over the simulator.
//!
//! Every function returns a [`FedsatStatus`]; on failure the message is
//! available from [`fedsat_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. Strings
//! returned through out-pointers are owned by the caller and released with
//! [`fedsat_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ndarray::ArrayView2;

use fedsat::aggregation::{compute_statistical_weights, AggregationConfig};
use fedsat::harness::{run, write_metrics_csv, RunConfig, RunOutput};
use fedsat::nn::{init_mlp, load_checkpoint, predict, save_checkpoint, Activation, ParamSet};
use fedsat::worker::ClassStats;
use fedsat::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedsatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    Numeric = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct FedsatModel {
    params: ParamSet,
}

/// Opaque handle to a finished simulation run.
pub struct FedsatRun {
    output: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> FedsatStatus {
    match e {
        Error::Io { .. } => FedsatStatus::Io,
        Error::BadMagic { .. }
        | Error::TruncatedFile { .. }
        | Error::CountMismatch { .. }
        | Error::Checkpoint(_)
        | Error::Metrics(_)
        | Error::Json(_) => FedsatStatus::Format,
        Error::ShapeMismatch(_) | Error::InconsistentClassCount { .. } => FedsatStatus::ShapeMismatch,
        Error::NonFiniteUpdate(_) => FedsatStatus::Numeric,
        _ => FedsatStatus::InvalidArgument,
    }
}

struct Failure(FedsatStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FedsatStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FedsatStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FedsatStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FedsatStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(FedsatStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(FedsatStatus::Format, "string contains NUL".into()))
}

fn activation_from(code: u32) -> Result<Activation, Failure> {
    match code {
        0 => Ok(Activation::Elu),
        1 => Ok(Activation::Relu),
        2 => Ok(Activation::Tanh),
        _ => Err(Failure(FedsatStatus::InvalidArgument, format!("unknown activation code {code}"))),
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn fedsat_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fedsat_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static library version string.
#[no_mangle]
pub extern "C" fn fedsat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Glorot-initialised MLP. Activation codes: 0 ELU, 1 ReLU, 2 tanh.
///
/// # Safety
/// `layer_sizes` must point to `num_sizes` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_model_init(
    layer_sizes: *const usize,
    num_sizes: usize,
    activation: u32,
    seed: u64,
    out: *mut *mut FedsatModel,
) -> FedsatStatus {
    guard(|| {
        if layer_sizes.is_null() {
            return Err(null("layer_sizes"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let sizes = std::slice::from_raw_parts(layer_sizes, num_sizes);
        let params = init_mlp(sizes, activation_from(activation)?, seed)?;
        *out = Box::into_raw(Box::new(FedsatModel { params }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_model_load(path: *const c_char, out: *mut *mut FedsatModel) -> FedsatStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let params = load_checkpoint(path)?;
        *out = Box::into_raw(Box::new(FedsatModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fedsat_model_save(model: *const FedsatModel, path: *const c_char) -> FedsatStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        save_checkpoint(str_arg(path, "path")?, &model.params)?;
        Ok(())
    })
}

/// Number of weight layers.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_model_num_layers(model: *const FedsatModel, out: *mut usize) -> FedsatStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = model.params.num_layers();
        Ok(())
    })
}

/// Predicted class per row of a row-major `rows x cols` matrix.
///
/// # Safety
/// `features` must hold `rows * cols` values and `out_labels` `rows` slots.
#[no_mangle]
pub unsafe extern "C" fn fedsat_model_predict(
    model: *const FedsatModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    out_labels: *mut usize,
) -> FedsatStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if rows == 0 {
            return Ok(());
        }
        if features.is_null() {
            return Err(null("features"));
        }
        if out_labels.is_null() {
            return Err(null("out_labels"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Failure(FedsatStatus::InvalidArgument, "rows * cols overflows".into()))?;
        let data = std::slice::from_raw_parts(features, len);
        let view = ndarray_view(data, rows, cols)?;
        let labels = predict(&model.params, view)?;
        std::slice::from_raw_parts_mut(out_labels, rows).copy_from_slice(&labels);
        Ok(())
    })
}

fn ndarray_view(data: &[f64], rows: usize, cols: usize) -> Result<ArrayView2<'_, f64>, Failure> {
    ArrayView2::from_shape((rows, cols), data).map_err(|e| Failure(FedsatStatus::ShapeMismatch, e.to_string()))
}

/// # Safety
/// `model` must come from this library; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn fedsat_model_free(model: *mut FedsatModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Runs a full simulation described by a JSON run config. Relative dataset
/// paths resolve against the working directory.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_run_from_json(config_json: *const c_char, out: *mut *mut FedsatRun) -> FedsatStatus {
    guard(|| {
        let cfg = RunConfig::from_json(str_arg(config_json, "config_json")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let output = run(&cfg)?;
        *out = Box::into_raw(Box::new(FedsatRun { output }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_run_num_rounds(run: *const FedsatRun, out: *mut usize) -> FedsatStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = run.output.records.len();
        Ok(())
    })
}

/// Global test accuracy after `round`.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_run_accuracy(run: *const FedsatRun, round: usize, out: *mut f64) -> FedsatStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let rec = run
            .output
            .records
            .get(round)
            .ok_or_else(|| Failure(FedsatStatus::InvalidArgument, format!("round {round} out of range")))?;
        *out.as_mut().ok_or_else(|| null("out"))? = rec.global_acc;
        Ok(())
    })
}

/// Metrics CSV text. Free with [`fedsat_string_free`].
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_run_metrics_csv(run: *const FedsatRun, out: *mut *mut c_char) -> FedsatStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let mut buf = Vec::new();
        write_metrics_csv(&run.output.records, run.output.num_classes, &mut buf)?;
        *out = into_c_string(String::from_utf8_lossy(&buf).into_owned())?;
        Ok(())
    })
}

/// Copy of the best-accuracy global model as a new handle.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_run_best_model(run: *const FedsatRun, out: *mut *mut FedsatModel) -> FedsatStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = Box::into_raw(Box::new(FedsatModel {
            params: run.output.best_model.clone(),
        }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn fedsat_run_free(run: *mut FedsatRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Statistical weight computation over worker class counts.
///
/// `stats_json` maps client id to that client's worker reports, each
/// `{"predicted": [...], "true_positive": [...], "target": [...],
/// "worker_id": w, "client_id": k}`. `config_json` may be NULL for the
/// default aggregation settings. The result is the priority report as JSON.
///
/// # Safety
/// Strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedsat_statistical_weights_json(
    stats_json: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> FedsatStatus {
    guard(|| {
        let stats: BTreeMap<usize, Vec<ClassStats>> =
            serde_json::from_str(str_arg(stats_json, "stats_json")?).map_err(Error::from)?;
        let cfg: AggregationConfig = if config_json.is_null() {
            AggregationConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        cfg.validate()?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let report = compute_statistical_weights(&stats, &cfg)?;
        *out = into_c_string(serde_json::to_string(&report).map_err(Error::from)?)?;
        Ok(())
    })
}
