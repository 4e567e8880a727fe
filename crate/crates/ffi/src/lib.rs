//! C ABI over the fuzzyseg library.
//!
//! Objects are exposed as opaque handles created by `*_new`/`*_load`/`fs_train`
//! and released with the matching `*_free`. Every fallible function returns an
//! [`FsStatus`]; on failure the message is kept per thread and can be fetched
//! with [`fs_last_error_message`]. Buffers are caller-owned.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use fuzzyseg::harness::{evaluate, load_checkpoint, run_training, save_checkpoint, Dataset, RunOptions, TrainConfig};
use fuzzyseg::metrics::{iou_per_class, miou, update_confusion, ConfusionMatrix};
use fuzzyseg::model::predict_probs;
use fuzzyseg::pseudolabel::{fuzzy_labels, normalized_entropy, pixel_weights};
use fuzzyseg::rebalance::class_weights;
use fuzzyseg::teacher_student::ParameterStore;
use fuzzyseg::tensorkit::Tensor;
use fuzzyseg::Error;

/// Result codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Validation = 3,
    Config = 4,
    Numerical = 5,
    Io = 6,
    Format = 7,
    State = 8,
    Evaluation = 9,
    Panic = 10,
}

/// Training configuration handle.
pub struct FsConfig {
    inner: TrainConfig,
}

/// Trained (teacher) parameters together with the configuration they came from.
pub struct FsModel {
    store: ParameterStore,
    config: TrainConfig,
    step: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FsStatus {
    match e {
        Error::Argument(_) => FsStatus::InvalidArgument,
        Error::Validation(_) => FsStatus::Validation,
        Error::Evaluation(_) => FsStatus::Evaluation,
        Error::Config(_) => FsStatus::Config,
        Error::State(_) => FsStatus::State,
        Error::Numerical(_) => FsStatus::Numerical,
        Error::Format(_) => FsStatus::Format,
        Error::Io(_) => FsStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FsStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FsStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FsStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::Argument(format!("{what} is not UTF-8"))))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn product(dims: &[usize]) -> Result<usize, Failure> {
    dims.iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Failure::Lib(Error::Argument("dimensions overflow".into())))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fs_last_error_message(buf: *mut c_char, len: usize) -> usize {
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

/// New configuration with default values.
#[no_mangle]
pub extern "C" fn fs_config_new() -> *mut FsConfig {
    Box::into_raw(Box::new(FsConfig {
        inner: TrainConfig::default(),
    }))
}

/// Parses a `key = value` configuration text into a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_config_parse(text: *const c_char, out: *mut *mut FsConfig) -> FsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let inner = TrainConfig::parse_str(cstr(text, "text")?)?;
        *out = Box::into_raw(Box::new(FsConfig { inner }));
        Ok(())
    })
}

/// Sets one configuration key.
///
/// # Safety
/// `config` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fs_config_set(config: *mut FsConfig, key: *const c_char, value: *const c_char) -> FsStatus {
    guard(|| {
        let cfg = out_ptr(config, "config")?;
        cfg.inner.set(cstr(key, "key")?, cstr(value, "value")?)?;
        Ok(())
    })
}

/// Checks the configuration for consistency.
///
/// # Safety
/// `config` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn fs_config_validate(config: *const FsConfig) -> FsStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or(Failure::Null("config"))?;
        cfg.inner.validate()?;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_config_free(config: *mut FsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Trains with `config` on its synthetic dataset and returns the teacher.
///
/// # Safety
/// `config` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_train(config: *const FsConfig, out: *mut *mut FsModel) -> FsStatus {
    guard(|| {
        let cfg = config.as_ref().ok_or(Failure::Null("config"))?;
        let out = out_ptr(out, "out")?;
        cfg.inner.validate()?;
        let dataset = Dataset::generate(&cfg.inner)?;
        let split = dataset.split(&cfg.inner)?;
        let outcome = run_training(&cfg.inner, &dataset, &split, &RunOptions::default())?;
        *out = Box::into_raw(Box::new(FsModel {
            store: outcome.teacher,
            config: cfg.inner.clone(),
            step: outcome.records.len(),
        }));
        Ok(())
    })
}

/// Loads a checkpoint directory written by `fs_model_save` or the CLI.
///
/// # Safety
/// `dir` must be a NUL-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fs_model_load(dir: *const c_char, out: *mut *mut FsModel) -> FsStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let (store, config, step) = load_checkpoint(Path::new(cstr(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(FsModel { store, config, step }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `dir` must be a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn fs_model_save(model: *const FsModel, dir: *const c_char) -> FsStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        save_checkpoint(Path::new(cstr(dir, "dir")?), &m.store, &m.config, m.step)?;
        Ok(())
    })
}

/// Number of classes the model predicts.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn fs_model_num_classes(model: *const FsModel) -> usize {
    model.as_ref().map_or(0, |m| m.config.num_classes)
}

/// Class probabilities for `n` images of `h`×`w` RGB pixels in [0, 1],
/// laid out N×3×H×W. `out_probs` receives N×C×H×W values.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fs_model_predict(
    model: *const FsModel,
    images: *const f64,
    n: usize,
    h: usize,
    w: usize,
    out_probs: *mut f64,
    out_len: usize,
) -> FsStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let cfg = m.config.model();
        let len = product(&[n, cfg.in_channels, h, w])?;
        let data: Vec<f64> = input(images, len, "images")?.iter().map(|v| v - 0.5).collect();
        let x = Tensor::new(&[n, cfg.in_channels, h, w], data)?;
        let probs = predict_probs(&m.store, &cfg, &x)?;
        if out_len != probs.len() {
            return Err(Error::Argument(format!("output holds {out_len} values, need {}", probs.len())).into());
        }
        output(out_probs, out_len, "out_probs")?.copy_from_slice(probs.data());
        Ok(())
    })
}

/// Evaluates the model on its configuration's evaluation scenes.
/// `out_class_iou` may be null; otherwise it holds `classes` values.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn fs_model_evaluate(
    model: *const FsModel,
    out_miou: *mut f64,
    out_class_iou: *mut f64,
    classes: usize,
) -> FsStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let out_miou = out_ptr(out_miou, "out_miou")?;
        let dataset = Dataset::generate(&m.config)?;
        let summary = evaluate(&m.store, &m.config.model(), &dataset.eval, "eval")?;
        *out_miou = summary.row.miou;
        if !out_class_iou.is_null() {
            let iou = &summary.row.iou.iou;
            if classes != iou.len() {
                return Err(Error::Argument(format!("class buffer holds {classes}, need {}", iou.len())).into());
            }
            output(out_class_iou, classes, "out_class_iou")?.copy_from_slice(iou);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fs_model_free(model: *mut FsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Top-`k` fuzzy labels of an N×C×H×W probability map, written to `out`
/// (same layout).
///
/// # Safety
/// `probs` and `out` must hold N·C·H·W values.
#[no_mangle]
pub unsafe extern "C" fn fs_fuzzy_labels(
    probs: *const f64,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        let len = product(&[n, c, h, w])?;
        let t = Tensor::new(&[n, c, h, w], input(probs, len, "probs")?.to_vec())?;
        let f = fuzzy_labels(&t, k)?;
        output(out, len, "out")?.copy_from_slice(f.probs().data());
        Ok(())
    })
}

/// Normalized entropy of an N×C×H×W probability map; `out` holds N·H·W values.
///
/// # Safety
/// `probs` must hold N·C·H·W values and `out` N·H·W values.
#[no_mangle]
pub unsafe extern "C" fn fs_normalized_entropy(
    probs: *const f64,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        let len = product(&[n, c, h, w])?;
        let t = Tensor::new(&[n, c, h, w], input(probs, len, "probs")?.to_vec())?;
        let e = normalized_entropy(&t)?;
        output(out, e.len(), "out")?.copy_from_slice(e.data());
        Ok(())
    })
}

/// Entropy-derived pixel weights for `len` entropy values.
///
/// # Safety
/// `entropy` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn fs_pixel_weights(entropy: *const f64, len: usize, threshold: f64, out: *mut f64) -> FsStatus {
    guard(|| {
        let t = Tensor::from_vec(input(entropy, len, "entropy")?.to_vec());
        let wts = pixel_weights(&t, threshold)?;
        output(out, len, "out")?.copy_from_slice(wts.data());
        Ok(())
    })
}

/// Median-frequency class weights from `classes` frequencies. A `cap` of
/// zero or less disables clipping.
///
/// # Safety
/// `frequencies` and `out` must hold `classes` values.
#[no_mangle]
pub unsafe extern "C" fn fs_class_weights(
    frequencies: *const f64,
    classes: usize,
    epsilon: f64,
    cap: f64,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        let mut wv = class_weights(input(frequencies, classes, "frequencies")?, epsilon)?;
        if cap > 0.0 {
            wv = wv.capped(cap);
        }
        output(out, classes, "out")?.copy_from_slice(&wv.weights);
        Ok(())
    })
}

/// Mean IoU of `len` predicted labels against ground truth; truth pixels
/// equal to `ignore` are skipped. `out_class_iou` may be null.
///
/// # Safety
/// `pred` and `truth` must hold `len` values; `out_class_iou` null or `classes`.
#[no_mangle]
pub unsafe extern "C" fn fs_miou(
    pred: *const u32,
    truth: *const u32,
    len: usize,
    classes: usize,
    ignore: u32,
    out_miou: *mut f64,
    out_class_iou: *mut f64,
) -> FsStatus {
    guard(|| {
        let out_miou = out_ptr(out_miou, "out_miou")?;
        let pred: Vec<usize> = input(pred, len, "pred")?.iter().map(|&v| v as usize).collect();
        let truth: Vec<usize> = input(truth, len, "truth")?.iter().map(|&v| v as usize).collect();
        let mut cm = ConfusionMatrix::new(classes);
        update_confusion(&mut cm, &pred, &truth, ignore as usize)?;
        let iou = iou_per_class(&cm);
        *out_miou = miou(&iou)?;
        if !out_class_iou.is_null() {
            output(out_class_iou, classes, "out_class_iou")?.copy_from_slice(&iou.iou);
        }
        Ok(())
    })
}
