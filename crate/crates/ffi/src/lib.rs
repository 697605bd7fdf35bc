//! C ABI over the polysent library.
//!
//! Conventions:
//! - every fallible function returns a [`PsStatus`] and writes results
//!   through out-pointers;
//! - on failure, [`ps_last_error`] returns a message for the calling thread;
//! - strings returned to the caller are owned and released with
//!   [`ps_string_free`];
//! - models and evaluators are opaque handles with matching `_free` calls.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use polysent::ensemble::TieBreak;
use polysent::metrics::{ClassMetrics, ClassReport, ConfusionMatrix};
use polysent::model::{predicted_label, ClassScores, ModelConfig, ModelHandle};
use polysent::report::{build_report, OutcomeRow};
use polysent::{Error, SentimentLabel};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The input was rejected (bad rating, bad ratios, empty matrix, ...).
    BadInput = 3,
    /// A checkpoint could not be found or is unsupported.
    Model = 4,
    /// File system failure.
    Io = 5,
    /// Unexpected internal failure, including caught panics.
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsLabel {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl From<SentimentLabel> for PsLabel {
    fn from(l: SentimentLabel) -> Self {
        match l {
            SentimentLabel::Negative => PsLabel::Negative,
            SentimentLabel::Neutral => PsLabel::Neutral,
            SentimentLabel::Positive => PsLabel::Positive,
        }
    }
}

/// Labels arrive from C as plain integers and are range-checked here.
fn label_arg(value: u32, name: &str) -> Result<SentimentLabel, (PsStatus, String)> {
    SentimentLabel::from_ordinal(value as usize)
        .ok_or_else(|| (PsStatus::BadInput, format!("`{name}` = {value} is not a PsLabel")))
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsTieBreak {
    SumScores = 0,
    LowestOrdinal = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PsClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PsAverages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Classification report; `classes` is indexed by label ordinal.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PsReport {
    pub classes: [PsClassMetrics; 3],
    pub accuracy: f64,
    pub macro_avg: PsAverages,
    pub weighted_avg: PsAverages,
}

/// Opaque model handle.
pub struct PsModel {
    handle: ModelHandle,
}

/// Opaque accumulator of (language, truth, prediction) outcomes.
pub struct PsEvaluator {
    rows: Vec<OutcomeRow>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> PsStatus {
    match err {
        Error::Io { .. } | Error::MissingFile(_) => PsStatus::Io,
        Error::UnresolvableCheckpoint(_) | Error::IncompatibleArchitecture(_) => PsStatus::Model,
        Error::NonFiniteLoss { .. } => PsStatus::Internal,
        _ => PsStatus::BadInput,
    }
}

/// Run `body`, recording any error or panic for [`ps_last_error`].
fn guard(body: impl FnOnce() -> Result<(), (PsStatus, String)>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PsStatus::Internal
        }
    }
}

fn lib(err: Error) -> (PsStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(name: &str) -> (PsStatus, String) {
    (PsStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (PsStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PsStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (PsStatus, String)> {
    p.as_mut().ok_or_else(|| null(name))
}

fn owned_string(s: String) -> Result<*mut c_char, (PsStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (PsStatus::Internal, "string contains an interior NUL".into()))
}

/// Message describing the last failure on this thread, or null if none.
/// Free with [`ps_string_free`].
#[no_mangle]
pub extern "C" fn ps_last_error() -> *mut c_char {
    LAST_ERROR
        .with(|e| e.borrow().clone())
        .and_then(|m| CString::new(m).ok())
        .map_or(ptr::null_mut(), CString::into_raw)
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer previously returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parse a rating such as `"4"`, `"4 stars"` or `"1 Star"`.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_parse_star_rating(raw: *const c_char, out: *mut u8) -> PsStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let out = out_arg(out, "out")?;
        *out = polysent::corpus::parse_star_rating(raw).map_err(lib)?;
        Ok(())
    })
}

/// Map a 1..=5 star rating to a sentiment label.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_map_stars_to_label(stars: u8, out: *mut PsLabel) -> PsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = polysent::map_stars_to_label(stars).map_err(lib)?.into();
        Ok(())
    })
}

/// Normalize tweet text. The result may be empty; free it with
/// [`ps_string_free`].
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_normalize_text(text: *const c_char, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        *out = owned_string(polysent::preprocess::normalize_text(text))?;
        Ok(())
    })
}

/// Split `n` stratum members into train/val/test counts.
///
/// # Safety
/// `ratios` must point to 3 doubles and `out` to 3 writable `size_t`s.
#[no_mangle]
pub unsafe extern "C" fn ps_stratum_allocation(n: usize, ratios: *const f64, out: *mut usize) -> PsStatus {
    guard(|| {
        if ratios.is_null() {
            return Err(null("ratios"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let ratios: [f64; 3] = std::slice::from_raw_parts(ratios, 3).try_into().unwrap();
        polysent::split::SplitSpec::new(ratios, 0).map_err(lib)?;
        let alloc = polysent::split::stratum_allocation(n, ratios);
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&alloc);
        Ok(())
    })
}

/// Majority vote over `members` probability rows (`scores` is
/// `members * 3` doubles, row-major). `tie_break` is a [`PsTieBreak`].
///
/// # Safety
/// `scores` must point to `members * 3` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_vote(
    scores: *const f64,
    members: usize,
    tie_break: u32,
    out: *mut PsLabel,
) -> PsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if scores.is_null() && members > 0 {
            return Err(null("scores"));
        }
        let flat = if members == 0 { &[][..] } else { std::slice::from_raw_parts(scores, members * 3) };
        let rows = flat
            .chunks_exact(3)
            .map(|r| ClassScores::new([r[0], r[1], r[2]]))
            .collect::<Result<Vec<_>, _>>()
            .map_err(lib)?;
        let tie_break = match tie_break {
            t if t == PsTieBreak::SumScores as u32 => TieBreak::SumScores,
            t if t == PsTieBreak::LowestOrdinal as u32 => TieBreak::LowestOrdinal,
            t => return Err((PsStatus::BadInput, format!("`tie_break` = {t} is not a PsTieBreak"))),
        };
        *out = polysent::ensemble::vote(&rows, tie_break).map_err(lib)?.into();
        Ok(())
    })
}

fn class_metrics(m: &ClassMetrics) -> PsClassMetrics {
    PsClassMetrics { precision: m.precision, recall: m.recall, f1: m.f1, support: m.support }
}

fn to_report(r: &ClassReport) -> PsReport {
    let avg = |a: &polysent::metrics::Averages| PsAverages { precision: a.precision, recall: a.recall, f1: a.f1 };
    PsReport {
        classes: SentimentLabel::ALL.map(|l| class_metrics(r.classes.get(l))),
        accuracy: r.accuracy,
        macro_avg: avg(&r.macro_avg),
        weighted_avg: avg(&r.weighted_avg),
    }
}

/// Classification report for a 3x3 confusion matrix (`counts` row-major,
/// rows true labels, columns predictions).
///
/// # Safety
/// `counts` must point to 9 integers; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_classification_report(counts: *const u64, out: *mut PsReport) -> PsStatus {
    guard(|| {
        if counts.is_null() {
            return Err(null("counts"));
        }
        let out = out_arg(out, "out")?;
        let flat = std::slice::from_raw_parts(counts, 9);
        let grid = std::array::from_fn(|t| std::array::from_fn(|p| flat[t * 3 + p]));
        let report = polysent::metrics::classification_report(&ConfusionMatrix::new(grid)).map_err(lib)?;
        *out = to_report(&report);
        Ok(())
    })
}

/// Load a model: `"toy"`, a checkpoint directory or a registry id.
/// `max_seq_len` 0 keeps the default.
///
/// # Safety
/// `checkpoint` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_model_load(
    checkpoint: *const c_char,
    max_seq_len: usize,
    seed: u64,
    out: *mut *mut PsModel,
) -> PsStatus {
    guard(|| {
        let checkpoint = str_arg(checkpoint, "checkpoint")?;
        let out = out_arg(out, "out")?;
        let mut config = ModelConfig::new(checkpoint);
        config.init_seed = seed;
        if max_seq_len > 0 {
            config.max_seq_len = max_seq_len;
        }
        let handle = polysent::model::load_model(&config).map_err(lib)?;
        *out = Box::into_raw(Box::new(PsModel { handle }));
        Ok(())
    })
}

/// Score one text. `probs` receives 3 probabilities; `label` (optional)
/// the argmax.
///
/// # Safety
/// `model` must come from [`ps_model_load`]; `text` must be NUL-terminated;
/// `probs` must point to 3 writable doubles; `label` may be null.
#[no_mangle]
pub unsafe extern "C" fn ps_model_predict(
    model: *const PsModel,
    text: *const c_char,
    probs: *mut f64,
    label: *mut PsLabel,
) -> PsStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let text = str_arg(text, "text")?;
        if probs.is_null() {
            return Err(null("probs"));
        }
        let h = &model.handle;
        let batch = h.encode_batch(&[polysent::preprocess::normalize_text(text)], h.config.max_seq_len).map_err(lib)?;
        let scores = h.predict_batch(&batch).map_err(lib)?[0];
        std::slice::from_raw_parts_mut(probs, 3).copy_from_slice(&scores.probs);
        if let Some(label) = label.as_mut() {
            *label = predicted_label(&scores).into();
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`ps_model_load`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ps_model_free(model: *mut PsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

#[no_mangle]
pub extern "C" fn ps_evaluator_new() -> *mut PsEvaluator {
    Box::into_raw(Box::new(PsEvaluator { rows: Vec::new() }))
}

/// Record one outcome; `truth` and `predicted` are [`PsLabel`] values.
///
/// # Safety
/// `evaluator` must come from [`ps_evaluator_new`]; `language` must be
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ps_evaluator_record(
    evaluator: *mut PsEvaluator,
    language: *const c_char,
    truth: u32,
    predicted: u32,
) -> PsStatus {
    guard(|| {
        let ev = out_arg(evaluator, "evaluator")?;
        let language = str_arg(language, "language")?;
        ev.rows.push(OutcomeRow {
            sample_id: ev.rows.len().to_string(),
            language: polysent::corpus::normalize_language(language),
            true_label: Some(label_arg(truth, "truth")?),
            predicted: label_arg(predicted, "predicted")?,
        });
        Ok(())
    })
}

/// Overall and per-language report as JSON (same shape as the CLI's
/// `report.json` plus `per_language`). Free with [`ps_string_free`].
///
/// # Safety
/// `evaluator` must come from [`ps_evaluator_new`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ps_evaluator_report_json(evaluator: *const PsEvaluator, out: *mut *mut c_char) -> PsStatus {
    guard(|| {
        let ev = evaluator.as_ref().ok_or_else(|| null("evaluator"))?;
        let out = out_arg(out, "out")?;
        if ev.rows.is_empty() {
            return Err(lib(Error::EmptyMatrix));
        }
        let bundle = build_report(&ev.rows).map_err(lib)?;
        let json = serde_json::json!({
            "overall": bundle.report,
            "confusion": bundle.overall,
            "per_language": bundle.per_language_reports,
        });
        *out = owned_string(json.to_string())?;
        Ok(())
    })
}

/// # Safety
/// `evaluator` must be null or come from [`ps_evaluator_new`], and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ps_evaluator_free(evaluator: *mut PsEvaluator) {
    if !evaluator.is_null() {
        drop(Box::from_raw(evaluator));
    }
}
