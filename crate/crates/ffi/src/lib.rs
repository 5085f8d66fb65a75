//! C ABI over the `esgnn` engine.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style calls and released with the matching `*_free`. Every fallible call
//! returns an [`EsgnnStatus`]; on failure the message is available from
//! [`esgnn_last_error`] on the same thread until the next failing call.
//! Panics are caught and reported as [`EsgnnStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use esgnn::experiments::{self, Prepared};
use esgnn::graph::{homophily_ratio, SplitScheme};
use esgnn::io::{self, Dataset, FeatureNorm};
use esgnn::model::{EsGnn, ModelKind, Params};
use esgnn::synth::{generate, row_for_target, SynthConfig};
use esgnn::train::{TrainConfig, TrainResult};
use esgnn::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsgnnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Shape = 5,
    NonFinite = 6,
    Infeasible = 7,
    Contract = 8,
    Capability = 9,
    Diverged = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

/// Feature preprocessing selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsgnnFeatureNorm {
    None = 0,
    RowL1 = 1,
    RowL2 = 2,
    Standardize = 3,
}

impl From<EsgnnFeatureNorm> for FeatureNorm {
    fn from(n: EsgnnFeatureNorm) -> Self {
        match n {
            EsgnnFeatureNorm::None => FeatureNorm::None,
            EsgnnFeatureNorm::RowL1 => FeatureNorm::RowL1,
            EsgnnFeatureNorm::RowL2 => FeatureNorm::RowL2,
            EsgnnFeatureNorm::Standardize => FeatureNorm::Standardize,
        }
    }
}

/// A loaded or generated dataset.
pub struct EsgnnDataset {
    inner: Dataset,
}

/// A trained model: its configuration and parameters.
pub struct EsgnnModel {
    config: TrainConfig,
    params: Params,
    acc_val: f64,
    acc_test: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EsgnnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Malformed(_)
            | Error::Parse { .. }
            | Error::CountMismatch { .. }
            | Error::Json(_) => EsgnnStatus::Parse,
            Error::UndefinedMetric(_) | Error::Contract(_) => EsgnnStatus::Contract,
            Error::Infeasible(_) => EsgnnStatus::Infeasible,
            Error::Shape { .. } => EsgnnStatus::Shape,
            Error::NonFinite(_) => EsgnnStatus::NonFinite,
            Error::MissingFile(_) | Error::Io(_) => EsgnnStatus::Io,
            Error::Capability(_) => EsgnnStatus::Capability,
            Error::Diverged { .. } => EsgnnStatus::Diverged,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: EsgnnStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EsgnnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EsgnnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            EsgnnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(EsgnnStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EsgnnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(EsgnnStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(EsgnnStatus::NullPointer, format!("{what} is null")))
}

unsafe fn buffer<'a, T>(
    p: *mut T,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(fail(EsgnnStatus::NullPointer, format!("{what} is null")));
    }
    if len < need {
        return Err(fail(
            EsgnnStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

fn parse_scheme(s: &str) -> Result<SplitScheme, Failure> {
    match s.trim() {
        "dense" => Ok(SplitScheme::DENSE),
        "sparse" => Ok(SplitScheme::SPARSE),
        other => match other.strip_prefix("rate:").map(str::parse::<f64>) {
            Some(Ok(r)) => Ok(SplitScheme::label_rate(r)),
            _ => Err(fail(
                EsgnnStatus::InvalidArgument,
                format!("unknown split scheme `{other}`"),
            )),
        },
    }
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn esgnn_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |c| c.as_ptr())
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn esgnn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset bundle directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_dataset_load(
    path: *const c_char,
    out: *mut *mut EsgnnDataset,
) -> EsgnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let inner = io::load_bundle(&path)?;
        *out = Box::into_raw(Box::new(EsgnnDataset { inner }));
        Ok(())
    })
}

/// Generates the synthetic graph of one homophily target (0.0, 0.1, ...,
/// 1.0) with `n` nodes (a multiple of 3).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_dataset_generate(
    h_target: f64,
    n: usize,
    seed: u64,
    out: *mut *mut EsgnnDataset,
) -> EsgnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let row = row_for_target(h_target)?;
        let cfg = SynthConfig {
            n,
            ..SynthConfig::from_row(row, seed)
        };
        let inner = Dataset::from_synth(format!("syn-h{h_target:.1}"), generate(&cfg)?);
        *out = Box::into_raw(Box::new(EsgnnDataset { inner }));
        Ok(())
    })
}

/// Writes the dataset as a bundle directory.
///
/// # Safety
/// `ds` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn esgnn_dataset_save(
    ds: *const EsgnnDataset,
    path: *const c_char,
) -> EsgnnStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        io::save_bundle(&ds.inner, &path)?;
        Ok(())
    })
}

/// Applies feature preprocessing in place.
///
/// # Safety
/// `ds` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn esgnn_dataset_normalize(
    ds: *mut EsgnnDataset,
    norm: EsgnnFeatureNorm,
) -> EsgnnStatus {
    guard(|| {
        let ds = out_arg(ds, "dataset")?;
        ds.inner.normalize_features(norm.into());
        Ok(())
    })
}

/// Node, edge, feature and class counts; any output may be null.
///
/// # Safety
/// `ds` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_dataset_shape(
    ds: *const EsgnnDataset,
    nodes: *mut usize,
    edges: *mut usize,
    features: *mut usize,
    classes: *mut usize,
) -> EsgnnStatus {
    guard(|| {
        let d = &ref_arg(ds, "dataset")?.inner;
        for (p, v) in [
            (nodes, d.num_nodes()),
            (edges, d.graph.num_edges()),
            (features, d.num_features()),
            (classes, d.num_classes()),
        ] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Fraction of edges joining same-label nodes.
///
/// # Safety
/// `ds` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_dataset_homophily(
    ds: *const EsgnnDataset,
    out: *mut f64,
) -> EsgnnStatus {
    guard(|| {
        let d = &ref_arg(ds, "dataset")?.inner;
        *out_arg(out, "out")? = homophily_ratio(&d.graph, &d.labels)?;
        Ok(())
    })
}

/// Releases a dataset; null is ignored.
///
/// # Safety
/// `ds` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn esgnn_dataset_free(ds: *mut EsgnnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains one model.
///
/// `config` holds `key = value` lines over library defaults (may be null);
/// `scheme` is `dense`, `sparse` or `rate:<fraction>`; `split_id` selects a
/// stored or derived split.
///
/// # Safety
/// `ds` must come from this library; strings must be NUL-terminated; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_train(
    ds: *const EsgnnDataset,
    config: *const c_char,
    scheme: *const c_char,
    split_id: usize,
    out: *mut *mut EsgnnModel,
) -> EsgnnStatus {
    guard(|| {
        let d = &ref_arg(ds, "dataset")?.inner;
        let out = out_arg(out, "out")?;
        let mut cfg = TrainConfig::default();
        if !config.is_null() {
            cfg.apply_file(str_arg(config, "config")?)?;
        }
        let scheme = parse_scheme(str_arg(scheme, "scheme")?)?;
        let split = experiments::split_for(d, scheme, split_id)?;
        let prepared = Prepared::new(d.clone());
        let TrainResult {
            params,
            acc_val,
            acc_test,
            ..
        } = prepared.train(&split, &cfg)?;
        *out = Box::into_raw(Box::new(EsgnnModel {
            config: cfg,
            params,
            acc_val,
            acc_test,
        }));
        Ok(())
    })
}

/// Validation and test accuracy recorded at training time (NaN for a
/// loaded checkpoint).
///
/// # Safety
/// `model` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_model_accuracy(
    model: *const EsgnnModel,
    acc_val: *mut f64,
    acc_test: *mut f64,
) -> EsgnnStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        if let Some(p) = acc_val.as_mut() {
            *p = m.acc_val;
        }
        if let Some(p) = acc_test.as_mut() {
            *p = m.acc_test;
        }
        Ok(())
    })
}

/// Evaluation-mode logits, `nodes x classes` row-major into `out`.
///
/// # Safety
/// `model` and `ds` must come from this library; `out` must hold `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn esgnn_model_logits(
    model: *const EsgnnModel,
    ds: *const EsgnnDataset,
    out: *mut f64,
    len: usize,
) -> EsgnnStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let d = &ref_arg(ds, "dataset")?.inner;
        let classifier = m.config.build()?;
        let prepared = Prepared::new(d.clone());
        let logits = classifier.predict(&m.params, &prepared.input())?;
        let dst = buffer(out, len, logits.len(), "out")?;
        for (o, v) in dst.iter_mut().zip(logits.iter()) {
            *o = *v;
        }
        Ok(())
    })
}

/// Final-layer `a_R` per edge (ES-GNN only), in the dataset's edge order.
///
/// # Safety
/// `model` and `ds` must come from this library; `out` must hold `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn esgnn_model_edge_split(
    model: *const EsgnnModel,
    ds: *const EsgnnDataset,
    out: *mut f64,
    len: usize,
) -> EsgnnStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let d = &ref_arg(ds, "dataset")?.inner;
        if m.config.model != ModelKind::Esgnn {
            return Err(fail(
                EsgnnStatus::InvalidArgument,
                format!("{} has no edge split", m.config.model),
            ));
        }
        let prepared = Prepared::new(d.clone());
        let ins = EsGnn::new(m.config.esgnn())?.inspect(&m.params, &prepared.input())?;
        let last = ins
            .splits
            .last()
            .ok_or_else(|| fail(EsgnnStatus::Contract, "model has no layers"))?;
        buffer(out, len, last.a_r.len(), "out")?.copy_from_slice(&last.a_r);
        Ok(())
    })
}

/// Writes a checkpoint directory.
///
/// # Safety
/// `model` must come from this library; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn esgnn_model_save(
    model: *const EsgnnModel,
    dir: *const c_char,
) -> EsgnnStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let config = serde_json::to_value(m.config).map_err(Error::from)?;
        io::save_checkpoint(
            &dir,
            m.config.model.as_str(),
            m.config.seed,
            config,
            &m.params,
        )?;
        Ok(())
    })
}

/// Reads a checkpoint directory.
///
/// # Safety
/// `dir` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_model_load(
    dir: *const c_char,
    out: *mut *mut EsgnnModel,
) -> EsgnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let (params, manifest) = io::load_checkpoint(&dir)?;
        let config: TrainConfig = serde_json::from_value(manifest.config).map_err(Error::from)?;
        *out = Box::into_raw(Box::new(EsgnnModel {
            config,
            params,
            acc_val: f64::NAN,
            acc_test: f64::NAN,
        }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn esgnn_model_free(model: *mut EsgnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Largest deviation between one aggregation step and one gradient step of
/// the denoising objective over `trials` random instances.
///
/// # Safety
/// `max_dev` must be writable.
#[no_mangle]
pub unsafe extern "C" fn esgnn_lemma_check(
    seed: u64,
    n: usize,
    d: usize,
    trials: usize,
    max_dev: *mut f64,
) -> EsgnnStatus {
    guard(|| {
        let out = out_arg(max_dev, "max_dev")?;
        *out = experiments::lemma_trials(seed, n, d, trials)?.max_dev;
        Ok(())
    })
}
