//! C ABI over `modprompt`.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! constructor (`*_from_json`, `*_load`, ...) and released by the matching `*_free`. Every
//! fallible call returns an [`MpStatus`]; on failure a message is available
//! from [`mp_last_error`] on the same thread until the next failing call.
//! Strings returned through out-pointers are owned by the caller and must be
//! released with [`mp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use modprompt::backbone::checkpoint::load_backbone;
use modprompt::backbone::Backbone;
use modprompt::corpus::{Label, TaskKind};
use modprompt::eval::{build_constraint_trie, max_decode_len, predict, Regime};
use modprompt::harness::{render_report, run_experiment, EvalReport, ExperimentConfig, ReportFormat};
use modprompt::promptstore::checkpoint::load_store;
use modprompt::promptstore::{formulate_prompt, PromptStore};
use modprompt::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Invalid configuration, flag value or label.
    InvalidInput = 3,
    /// File system failure.
    Io = 4,
    /// Missing or inconsistent checkpoint.
    Checkpoint = 5,
    /// Any other failure while running.
    Runtime = 6,
    /// A panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpReportFormat {
    Json = 0,
    Markdown = 1,
    Csv = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpTaskKind {
    SingleClass = 0,
    SequenceLabel = 1,
    Relation = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MpRegime {
    Specific = 0,
    Agnostic = 1,
    Fused = 2,
}

/// Experiment configuration.
pub struct MpExperiment(ExperimentConfig);
/// Aggregated evaluation report.
pub struct MpReport(EvalReport);
/// A frozen backbone checkpoint.
pub struct MpBackbone(Backbone<f32>);
/// A label-prompt store bound to the backbone it was loaded against.
pub struct MpPromptStore(PromptStore<f32>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> MpStatus {
    match e {
        Error::Io { .. } => MpStatus::Io,
        Error::MissingCheckpoint(_) | Error::Checkpoint(_) => MpStatus::Checkpoint,
        Error::Config(_) | Error::InvalidLabel(_) | Error::UnknownLabel(_) | Error::Json(_) | Error::InvalidSplit(_) => {
            MpStatus::InvalidInput
        }
        _ => MpStatus::Runtime,
    }
}

/// Run `f`, turning errors and panics into a status plus a message.
fn guard(f: impl FnOnce() -> Result<(), (MpStatus, String)>) -> MpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            MpStatus::Panic
        }
    }
}

fn lib<T>(r: modprompt::Result<T>) -> Result<T, (MpStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (MpStatus, String)> {
    if p.is_null() {
        return Err((MpStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (MpStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, (MpStatus, String)> {
    p.as_ref().ok_or_else(|| (MpStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<T>(out: *mut *mut T, value: T) -> Result<(), (MpStatus, String)> {
    if out.is_null() {
        return Err((MpStatus::NullArgument, "out is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn out_string(out: *mut *mut c_char, s: String) -> Result<(), (MpStatus, String)> {
    if out.is_null() {
        return Err((MpStatus::NullArgument, "out is null".into()));
    }
    *out = CString::new(s).map_err(|_| (MpStatus::Runtime, "string contains a nul byte".to_string()))?.into_raw();
    Ok(())
}

unsafe fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failing call on this thread (empty if none). The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse an experiment config from JSON text; missing keys take defaults.
///
/// # Safety
/// `json` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_experiment_from_json(json: *const c_char, out: *mut *mut MpExperiment) -> MpStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| (MpStatus::InvalidInput, e.to_string()))?;
        out_arg(out, MpExperiment(cfg))
    })
}

/// Read an experiment config file.
///
/// # Safety
/// `path` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_experiment_load(path: *const c_char, out: *mut *mut MpExperiment) -> MpStatus {
    guard(|| {
        let p = PathBuf::from(str_arg(path, "path")?);
        out_arg(out, MpExperiment(lib(ExperimentConfig::from_file(&p))?))
    })
}

/// Override the output directory.
///
/// # Safety
/// `exp` must come from this library; `dir` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mp_experiment_set_out_dir(exp: *mut MpExperiment, dir: *const c_char) -> MpStatus {
    guard(|| {
        let d = PathBuf::from(str_arg(dir, "dir")?);
        let e = exp.as_mut().ok_or((MpStatus::NullArgument, "exp is null".to_string()))?;
        e.0.out_dir = d;
        Ok(())
    })
}

/// The effective config as JSON.
///
/// # Safety
/// `exp` must come from this library; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_experiment_to_json(exp: *const MpExperiment, out: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let e = ref_arg(exp, "exp")?;
        out_string(out, lib(serde_json::to_string_pretty(&e.0).map_err(Error::from))?)
    })
}

/// Run the whole experiment (pretraining, every method and seed,
/// evaluation, probes) and return the aggregated report.
///
/// # Safety
/// `exp` must come from this library; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_experiment_run(exp: *const MpExperiment, out: *mut *mut MpReport) -> MpStatus {
    guard(|| {
        let e = ref_arg(exp, "exp")?;
        out_arg(out, MpReport(lib(run_experiment(&e.0))?))
    })
}

/// # Safety
/// `exp` must be null or come from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_experiment_free(exp: *mut MpExperiment) {
    free_box(exp)
}

/// Render a report.
///
/// # Safety
/// `report` must come from this library; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_report_render(report: *const MpReport, format: MpReportFormat, out: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let r = ref_arg(report, "report")?;
        let f = match format {
            MpReportFormat::Json => ReportFormat::Json,
            MpReportFormat::Markdown => ReportFormat::Markdown,
            MpReportFormat::Csv => ReportFormat::Csv,
        };
        out_string(out, lib(render_report(&r.0, f))?)
    })
}

/// Mean and population std of one report cell. `stage` is a stage number
/// or "mean".
///
/// # Safety
/// Pointers must be valid; strings valid C strings.
#[no_mangle]
pub unsafe extern "C" fn mp_report_cell(
    report: *const MpReport,
    method: *const c_char,
    regime: MpRegime,
    constrained: bool,
    stage: *const c_char,
    mean: *mut f64,
    std: *mut f64,
) -> MpStatus {
    guard(|| {
        let r = ref_arg(report, "report")?;
        let m = str_arg(method, "method")?;
        let s = str_arg(stage, "stage")?;
        if mean.is_null() || std.is_null() {
            return Err((MpStatus::NullArgument, "mean or std is null".into()));
        }
        let regime = match regime {
            MpRegime::Specific => Regime::Specific,
            MpRegime::Agnostic => Regime::Agnostic,
            MpRegime::Fused => Regime::Fused,
        };
        let c = r
            .0
            .cell(m, regime, constrained, s)
            .ok_or_else(|| (MpStatus::InvalidInput, format!("no cell {m}/{regime}/{s}")))?;
        *mean = c.mean;
        *std = c.std;
        Ok(())
    })
}

/// # Safety
/// `report` must be null or come from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_report_free(report: *mut MpReport) {
    free_box(report)
}

/// Load a backbone checkpoint directory; the result is frozen.
///
/// # Safety
/// `dir` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mp_backbone_load(dir: *const c_char, out: *mut *mut MpBackbone) -> MpStatus {
    guard(|| {
        let d = PathBuf::from(str_arg(dir, "dir")?);
        let mut b: Backbone<f32> = lib(load_backbone(&d))?;
        b.freeze();
        out_arg(out, MpBackbone(b))
    })
}

/// Model width, or 0 for a null handle.
///
/// # Safety
/// `b` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn mp_backbone_d_model(b: *const MpBackbone) -> usize {
    b.as_ref().map_or(0, |b| b.0.d_model())
}

/// # Safety
/// `b` must be null or come from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_backbone_free(b: *mut MpBackbone) {
    free_box(b)
}

/// Load a label-prompt store checkpoint saved against `backbone`.
///
/// # Safety
/// Pointers must be valid; `dir` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn mp_store_load(dir: *const c_char, backbone: *const MpBackbone, out: *mut *mut MpPromptStore) -> MpStatus {
    guard(|| {
        let d = PathBuf::from(str_arg(dir, "dir")?);
        let b = ref_arg(backbone, "backbone")?;
        out_arg(out, MpPromptStore(lib(load_store(&d, &b.0))?))
    })
}

/// Number of labels in the store, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn mp_store_len(s: *const MpPromptStore) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Name of the `i`-th label (insertion order) as a new string.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mp_store_label(s: *const MpPromptStore, i: usize, out: *mut *mut c_char) -> MpStatus {
    guard(|| {
        let s = ref_arg(s, "store")?;
        let l = s.0.labels().get(i).ok_or_else(|| (MpStatus::InvalidInput, format!("label index {i} out of range")))?;
        out_string(out, l.to_string())
    })
}

/// Predict the target for `input` with the prompts of `labels` composed in
/// canonical order, optionally constraining decoding to well-formed targets
/// over those labels.
///
/// # Safety
/// Pointers must be valid; `labels` must point to `n_labels` C strings.
#[no_mangle]
pub unsafe extern "C" fn mp_store_predict(
    store: *const MpPromptStore,
    backbone: *const MpBackbone,
    task_kind: MpTaskKind,
    labels: *const *const c_char,
    n_labels: usize,
    input: *const c_char,
    constrained: bool,
    out: *mut *mut c_char,
) -> MpStatus {
    guard(|| {
        let s = ref_arg(store, "store")?;
        let b = ref_arg(backbone, "backbone")?;
        let text = str_arg(input, "input")?;
        if labels.is_null() && n_labels > 0 {
            return Err((MpStatus::NullArgument, "labels is null".into()));
        }
        let mut set = Vec::with_capacity(n_labels);
        for i in 0..n_labels {
            set.push(lib(Label::new(str_arg(*labels.add(i), "label")?))?);
        }
        let kind = match task_kind {
            MpTaskKind::SingleClass => TaskKind::SingleClass,
            MpTaskKind::SequenceLabel => TaskKind::SequenceLabel,
            MpTaskKind::Relation => TaskKind::Relation,
        };
        let order = lib(s.0.canonical_order(&set))?;
        let prompt = lib(formulate_prompt(&s.0, &order))?;
        let constraint = constrained.then(|| build_constraint_trie(&order, kind, b.0.vocab()));
        let pred = lib(predict(&b.0, &prompt, text, max_decode_len(kind, &order, &b.0), constraint.as_ref()))?;
        out_string(out, pred)
    })
}

/// # Safety
/// `s` must be null or come from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mp_store_free(s: *mut MpPromptStore) {
    free_box(s)
}

