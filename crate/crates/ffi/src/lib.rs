//! C ABI over the `eventcause` library.
//!
//! Objects cross the boundary as opaque handles created by `ec_*_new`,
//! `ec_*_load` or `ec_*_train` and released with the matching `ec_*_free`.
//! Every fallible function returns an [`EcStatus`]; on failure the message is
//! available from [`ec_last_error_message`] on the same thread until the next
//! failing call. Panics are caught and reported as `EC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use eventcause::autodiff::ParamStore;
use eventcause::causal::CausalModel;
use eventcause::config::RunConfig;
use eventcause::evaluation::bacc;
use eventcause::pipeline::{
    causal_checkpoint, file_dataset, guidance, load_causal, load_predictor, run_causal, synthetic_dataset, Dataset,
};
use eventcause::predict::PredictorModel;
use eventcause::Error;

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EcStatus {
    Ok = 0,
    /// A null pointer, bad UTF-8 or an undersized output buffer.
    InvalidArgument = 1,
    Config = 2,
    Io = 3,
    Checkpoint = 4,
    Data = 5,
    UndefinedMetric = 6,
    Runtime = 7,
    Panic = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> EcStatus {
    match e {
        Error::Config(_) => EcStatus::Config,
        Error::Io { .. } => EcStatus::Io,
        Error::Checkpoint { .. } | Error::ParamShape { .. } => EcStatus::Checkpoint,
        Error::Ingestion { .. } | Error::Csv(_) | Error::Json(_) | Error::Consistency(_) => EcStatus::Data,
        Error::UndefinedMetric(_) => EcStatus::UndefinedMetric,
        _ => EcStatus::Runtime,
    }
}

struct Fail(EcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(EcStatus::InvalidArgument, msg.into())
}

/// Runs `f`, translating errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            EcStatus::Panic
        }
    }
}

unsafe fn string_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("`{name}` is null")))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(invalid(format!("`{name}` is null")));
    }
    if len < needed {
        return Err(invalid(format!("`{name}` holds {len} values, {needed} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

fn parse_config(json: &str) -> Result<RunConfig, Fail> {
    let cfg = if json.trim().is_empty() {
        RunConfig::default()
    } else {
        RunConfig::from_json(json)?
    };
    cfg.validate()?;
    Ok(cfg)
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(invalid("output handle pointer is null"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Samples and split of one run.
pub struct EcDataset {
    config: RunConfig,
    data: Dataset,
}

/// A trained stage-1 model.
pub struct EcCausalModel {
    model: CausalModel,
    params: ParamStore,
}

/// A trained stage-2 model.
pub struct EcPredictor {
    model: PredictorModel,
    params: ParamStore,
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Generates a synthetic dataset from a JSON run configuration (an empty
/// string selects the defaults).
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ec_dataset_synthetic(config_json: *const c_char, out: *mut *mut EcDataset) -> EcStatus {
    guard(|| {
        let config = parse_config(string_arg(config_json, "config_json")?)?;
        let data = synthetic_dataset(&config)?;
        put(out, EcDataset { config, data })
    })
}

/// Loads an event CSV (and optional adjacency CSV, may be null).
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ec_dataset_from_csv(
    config_json: *const c_char,
    events_path: *const c_char,
    adjacency_path: *const c_char,
    out: *mut *mut EcDataset,
) -> EcStatus {
    guard(|| {
        let config = parse_config(string_arg(config_json, "config_json")?)?;
        let events = PathBuf::from(string_arg(events_path, "events_path")?);
        let adjacency = if adjacency_path.is_null() {
            None
        } else {
            Some(PathBuf::from(string_arg(adjacency_path, "adjacency_path")?))
        };
        let data = file_dataset(&config, &events, adjacency.as_deref())?;
        put(out, EcDataset { config, data })
    })
}

/// # Safety
/// `dataset` must come from an `ec_dataset_*` constructor or be null.
#[no_mangle]
pub unsafe extern "C" fn ec_dataset_free(dataset: *mut EcDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ec_dataset_len(dataset: *const EcDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.data.samples.len())
}

/// Writes the factual outcome (0 or 1) of every sample into `labels`.
///
/// # Safety
/// `labels` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ec_dataset_labels(dataset: *const EcDataset, labels: *mut u8, len: usize) -> EcStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let out = out_slice(labels, len, d.data.samples.len(), "labels")?;
        for (o, s) in out.iter_mut().zip(&d.data.samples) {
            *o = u8::from(s.outcome);
        }
        Ok(())
    })
}

/// Writes the sample indices of the test split into `indices` and their
/// count into `count`. Pass a null buffer to query the count alone.
///
/// # Safety
/// `indices` must hold `len` values unless null; `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ec_dataset_test_indices(
    dataset: *const EcDataset,
    indices: *mut usize,
    len: usize,
    count: *mut usize,
) -> EcStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let test = &d.data.split.test;
        if count.is_null() {
            return Err(invalid("`count` is null"));
        }
        *count = test.len();
        if !indices.is_null() {
            out_slice(indices, len, test.len(), "indices")?.copy_from_slice(test);
        }
        Ok(())
    })
}

/// Trains a causal model on the dataset with the dataset's configuration.
///
/// # Safety
/// `dataset` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ec_causal_train(dataset: *const EcDataset, out: *mut *mut EcCausalModel) -> EcStatus {
    guard(|| {
        let d = handle(dataset, "dataset")?;
        let trained = run_causal(&d.config, &d.data, &d.data.samples, &mut |_| {})?;
        put(
            out,
            EcCausalModel {
                model: trained.model,
                params: trained.params,
            },
        )
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ec_causal_load(path: *const c_char, out: *mut *mut EcCausalModel) -> EcStatus {
    guard(|| {
        let path = PathBuf::from(string_arg(path, "path")?);
        let (model, params, _) = load_causal(&path)?;
        put(out, EcCausalModel { model, params })
    })
}

/// Saves a causal model; `config_hash` (may be null) is recorded in the
/// manifest.
///
/// # Safety
/// `model` must be live; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ec_causal_save(
    model: *const EcCausalModel,
    path: *const c_char,
    config_hash: *const c_char,
) -> EcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let path = PathBuf::from(string_arg(path, "path")?);
        let hash = if config_hash.is_null() {
            ""
        } else {
            string_arg(config_hash, "config_hash")?
        };
        causal_checkpoint(&m.model, &m.params, hash).save(&path)?;
        Ok(())
    })
}

/// # Safety
/// `model` must come from `ec_causal_*` or be null.
#[no_mangle]
pub unsafe extern "C" fn ec_causal_free(model: *mut EcCausalModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of treatment types the model was built for; 0 for null.
///
/// # Safety
/// `model` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn ec_causal_event_types(model: *const EcCausalModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.dims.event_types)
}

/// Writes the estimated ITE of `treatment` for every sample of `dataset`.
///
/// # Safety
/// Handles must be live; `ite` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ec_causal_predict_ite(
    model: *const EcCausalModel,
    dataset: *const EcDataset,
    treatment: usize,
    ite: *mut f64,
    len: usize,
) -> EcStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let d = handle(dataset, "dataset")?;
        if treatment >= m.model.dims.event_types {
            return Err(invalid(format!(
                "treatment {treatment} of {}",
                m.model.dims.event_types
            )));
        }
        let out = out_slice(ite, len, d.data.samples.len(), "ite")?;
        for (o, po) in out.iter_mut().zip(m.model.predict(&m.params, &d.data.samples)?) {
            *o = po.ite(treatment);
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ec_predictor_load(path: *const c_char, out: *mut *mut EcPredictor) -> EcStatus {
    guard(|| {
        let path = PathBuf::from(string_arg(path, "path")?);
        let (model, params, _) = load_predictor(&path)?;
        put(out, EcPredictor { model, params })
    })
}

/// # Safety
/// `predictor` must come from `ec_predictor_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn ec_predictor_free(predictor: *mut EcPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

/// Writes the event probability of every sample. `causal` supplies the
/// guidance and is required when the predictor uses reweighting or the
/// constraint; otherwise it may be null.
///
/// # Safety
/// Handles must be live or null as described; `probs` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ec_predictor_predict(
    predictor: *const EcPredictor,
    causal: *const EcCausalModel,
    dataset: *const EcDataset,
    probs: *mut f64,
    len: usize,
) -> EcStatus {
    guard(|| {
        let p = handle(predictor, "predictor")?;
        let d = handle(dataset, "dataset")?;
        let guide = if p.model.config.needs_guidance() {
            let c = handle(causal, "causal")?;
            Some(guidance(&c.model, &c.params, &d.data.samples)?)
        } else {
            None
        };
        let out = out_slice(probs, len, d.data.samples.len(), "probs")?;
        out.copy_from_slice(&p.model.predict(&p.params, &d.data.samples, guide.as_deref())?);
        Ok(())
    })
}

/// Balanced accuracy at threshold 0.5. Labels are 0 or nonzero.
///
/// # Safety
/// `probs` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ec_bacc(probs: *const f64, labels: *const u8, n: usize, out: *mut f64) -> EcStatus {
    guard(|| {
        if probs.is_null() || labels.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        let p = std::slice::from_raw_parts(probs, n);
        let l: Vec<bool> = std::slice::from_raw_parts(labels, n).iter().map(|&v| v != 0).collect();
        *out = bacc(p, &l)?.value;
        Ok(())
    })
}
