//! C interface to `spanconf`.
//!
//! Every fallible function returns a [`SpanconfStatus`] and writes its result
//! through an out pointer. On failure, [`spanconf_last_error`] describes the
//! error for the calling thread. Handles are opaque and must be released with
//! their `_free` function; strings returned by the library are released with
//! [`spanconf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use spanconf::correctness::Thresholds;
use spanconf::eval::ScoredDataset;
use spanconf::metrics::{RegularizationConfig, WindowConfig};
use spanconf::{GenerationTrace, QARecord};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanconfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    /// The statistic is undefined for this input (e.g. a single label class).
    Degenerate = 5,
    Panic = 6,
}

/// A generation trace: tokens with their log-probabilities.
pub struct SpanconfTrace(GenerationTrace);

/// A parsed JSONL dataset of question records.
pub struct SpanconfDataset(Vec<QARecord>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SpanconfStatus, String);

impl Failure {
    fn new(status: SpanconfStatus, msg: impl std::fmt::Display) -> Self {
        Self(status, msg.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpanconfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SpanconfStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpanconfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(SpanconfStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(SpanconfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    non_null(out, "output pointer")?;
    out.write(value);
    Ok(())
}

unsafe fn trace_ref<'a>(t: *const SpanconfTrace) -> Result<&'a GenerationTrace, Failure> {
    non_null(t, "trace")?;
    Ok(&(*t).0)
}

unsafe fn dataset_ref<'a>(d: *const SpanconfDataset) -> Result<&'a [QARecord], Failure> {
    non_null(d, "dataset")?;
    Ok(&(*d).0)
}

fn window(w: usize) -> Result<WindowConfig, Failure> {
    WindowConfig::new(w).map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn spanconf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn spanconf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by the library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn spanconf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a trace from `len` natural-log token probabilities (each <= 0).
///
/// # Safety
/// `logprobs` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_trace_from_logprobs(
    logprobs: *const f64,
    len: usize,
    out: *mut *mut SpanconfTrace,
) -> SpanconfStatus {
    guard(|| {
        let lps = slice(logprobs, len, "logprobs")?;
        let t = GenerationTrace::from_logprobs(lps).map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))?;
        write(out, Box::into_raw(Box::new(SpanconfTrace(t))))
    })
}

/// # Safety
/// `trace` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn spanconf_trace_free(trace: *mut SpanconfTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_trace_len(trace: *const SpanconfTrace, out: *mut usize) -> SpanconfStatus {
    guard(|| write(out, trace_ref(trace)?.len()))
}

/// exp of the mean negative log-likelihood.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_perplexity(trace: *const SpanconfTrace, out: *mut f64) -> SpanconfStatus {
    guard(|| write(out, spanconf::perplexity(trace_ref(trace)?)))
}

/// Smallest token probability.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_min_p(trace: *const SpanconfTrace, out: *mut f64) -> SpanconfStatus {
    guard(|| write(out, spanconf::min_token_prob(trace_ref(trace)?)))
}

/// Lowest mean probability over windows of `window` tokens (clamped to the
/// trace length). Lower means less confident.
///
/// # Safety
/// `trace` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_lsc(trace: *const SpanconfTrace, window: usize, out: *mut f64) -> SpanconfStatus {
    guard(|| {
        let cfg = self::window(window)?;
        write(out, spanconf::lsc(trace_ref(trace)?, cfg))
    })
}

/// AUROC of `scores` (higher = more likely hallucinated) against `positives`
/// (non-zero = hallucinated).
///
/// # Safety
/// Both arrays must hold `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_auroc(
    scores: *const f64,
    positives: *const u8,
    len: usize,
    out: *mut f64,
) -> SpanconfStatus {
    guard(|| {
        let s = slice(scores, len, "scores")?;
        let p: Vec<bool> = slice(positives, len, "positives")?.iter().map(|&b| b != 0).collect();
        let v = spanconf::auroc(s, &p).map_err(eval_failure)?;
        write(out, v)
    })
}

/// Pearson correlation of two arrays of `len` values.
///
/// # Safety
/// Both arrays must hold `len` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_pcc(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> SpanconfStatus {
    guard(|| {
        let v = spanconf::pcc(slice(x, len, "x")?, slice(y, len, "y")?).map_err(eval_failure)?;
        write(out, v)
    })
}

fn eval_failure(e: spanconf::eval::EvalError) -> Failure {
    use spanconf::eval::EvalError as E;
    let status = match e {
        E::DegenerateLabels | E::ConstantInput | E::TooFew(_) => SpanconfStatus::Degenerate,
        _ => SpanconfStatus::InvalidArgument,
    };
    Failure::new(status, e)
}

/// ROUGE-L F1 between two UTF-8 strings.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_rouge_l_f1(
    candidate: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> SpanconfStatus {
    guard(|| {
        let v = spanconf::correctness::rouge_l_f1(string(candidate, "candidate")?, string(reference, "reference")?)
            .map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))?;
        write(out, v)
    })
}

/// Reads and validates a JSONL dataset file.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_dataset_open(path: *const c_char, out: *mut *mut SpanconfDataset) -> SpanconfStatus {
    guard(|| {
        let path = Path::new(string(path, "path")?);
        let file = std::fs::File::open(path)
            .map_err(|e| Failure::new(SpanconfStatus::Io, format!("{}: {e}", path.display())))?;
        let records = spanconf::parse_dataset(std::io::BufReader::new(file))
            .map_err(|e| Failure::new(SpanconfStatus::Parse, format!("{}: {e}", path.display())))?;
        write(out, Box::into_raw(Box::new(SpanconfDataset(records))))
    })
}

/// # Safety
/// `dataset` must come from this library and not be freed twice. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn spanconf_dataset_free(dataset: *mut SpanconfDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_dataset_len(dataset: *const SpanconfDataset, out: *mut usize) -> SpanconfStatus {
    guard(|| write(out, dataset_ref(dataset)?.len()))
}

/// Copies the id of record `index`. Free with [`spanconf_string_free`].
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_dataset_id(
    dataset: *const SpanconfDataset,
    index: usize,
    out: *mut *mut c_char,
) -> SpanconfStatus {
    guard(|| {
        let r = record(dataset, index)?;
        let s = CString::new(r.id.as_str()).map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))?;
        write(out, s.into_raw())
    })
}

/// Copies the greedy trace of record `index` into a new handle.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_dataset_greedy_trace(
    dataset: *const SpanconfDataset,
    index: usize,
    out: *mut *mut SpanconfTrace,
) -> SpanconfStatus {
    guard(|| {
        let t = record(dataset, index)?.greedy.clone();
        write(out, Box::into_raw(Box::new(SpanconfTrace(t))))
    })
}

unsafe fn record<'a>(dataset: *const SpanconfDataset, index: usize) -> Result<&'a QARecord, Failure> {
    let records = dataset_ref(dataset)?;
    records.get(index).ok_or_else(|| {
        Failure::new(
            SpanconfStatus::InvalidArgument,
            format!("index {index} out of range for {} records", records.len()),
        )
    })
}

/// Scores, labels and evaluates the whole dataset and returns the summary
/// as a JSON string. Free it with [`spanconf_string_free`]. Returns
/// `SPANCONF_STATUS_DEGENERATE` (with the JSON still written) when no metric
/// could be evaluated.
///
/// # Safety
/// `dataset` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn spanconf_dataset_evaluate(
    dataset: *const SpanconfDataset,
    window: usize,
    rouge_threshold: f64,
    semantic_threshold: f64,
    alpha: f64,
    out_json: *mut *mut c_char,
) -> SpanconfStatus {
    guard(|| {
        let records = dataset_ref(dataset)?;
        non_null(out_json, "output pointer")?;
        let cfg = self::window(window)?;
        let th = Thresholds::new(rouge_threshold, semantic_threshold)
            .map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))?;
        let reg = RegularizationConfig::new(alpha).map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))?;
        let reports = records.iter().map(|r| spanconf::score_record(r, cfg, reg)).collect();
        let labels = records
            .iter()
            .map(|r| spanconf::label_record(r, th))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))?;
        let ds = ScoredDataset::new(reports, labels).map_err(eval_failure)?;
        let summary = spanconf::evaluate(&ds);
        let json = serde_json::to_string(&summary).map_err(|e| Failure::new(SpanconfStatus::Panic, e))?;
        let json = CString::new(json).map_err(|e| Failure::new(SpanconfStatus::InvalidArgument, e))?;
        write(out_json, json.into_raw())?;
        if summary.all_degenerate() {
            return Err(Failure::new(SpanconfStatus::Degenerate, "no metric could be evaluated"));
        }
        Ok(())
    })
}
