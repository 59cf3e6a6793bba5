//! C ABI over the core toolkit.
//!
//! Every object crosses the boundary as an opaque handle created by a
//! `*_load`/`strata_classify` call and released by the matching `*_free`.
//! Functions return [`StrataStatus`]; anything but `Ok` leaves a message
//! retrievable with [`strata_last_error`]. Handles are not synchronized —
//! share one across threads only behind your own lock.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use strata_core::classifier::{self, ClassifierConfig};
use strata_core::estimate::{estimate_campaign, CostModel, EstimateParams, LayerCostSpec};
use strata_core::matrix::HitRatioMatrix;
use strata_core::monitor::score_counts;
use strata_core::report;
use strata_core::template::{ClassifiedTemplate, TemplateError};
use strata_core::trace::{AccessTrace, TraceError};
use strata_core::types::Granularity;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrataStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArg = 1,
    /// A string argument was not valid UTF-8.
    Utf8 = 2,
    /// Reading or writing a file failed.
    Io = 3,
    /// The input did not parse.
    Parse = 4,
    /// Parsed but failed validation, or an index was out of range.
    Invalid = 5,
    /// A bug tripped an internal panic; the handle is still usable.
    Internal = 6,
}

/// Precision / recall / F-score triple for one event.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrataScore {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Cost figures for a campaign plan, in seconds.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrataEstimate {
    pub flat_seconds: f64,
    pub layered_seconds: f64,
    /// flat / layered; 0 when the layered plan costs nothing.
    pub speedup: f64,
}

/// Shape and score of one template entry.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StrataEntryInfo {
    pub offset: u64,
    pub granularity_bytes: u64,
    pub score: f64,
    pub event_count: usize,
    pub suppress_count: usize,
}

pub struct StrataTrace(AccessTrace);
pub struct StrataMatrix(HitRatioMatrix);
pub struct StrataTemplate(ClassifiedTemplate);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: StrataStatus, err: impl Display) -> StrataStatus {
    let msg = err.to_string().replace('\0', "?");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap());
    status
}

fn guarded(f: impl FnOnce() -> StrataStatus) -> StrataStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(StrataStatus::Internal, "internal panic"),
    }
}

/// Reads a `*const c_char` argument into &str or returns early.
macro_rules! arg_str {
    ($ptr:expr, $name:literal) => {{
        if $ptr.is_null() {
            return fail(StrataStatus::NullArg, concat!($name, " is null"));
        }
        match unsafe { CStr::from_ptr($ptr) }.to_str() {
            Ok(s) => s,
            Err(_) => return fail(StrataStatus::Utf8, concat!($name, " is not UTF-8")),
        }
    }};
}

/// Dereferences a handle or out-pointer argument, rejecting null.
macro_rules! arg_ref {
    ($ptr:expr, $name:literal) => {{
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => return fail(StrataStatus::NullArg, concat!($name, " is null")),
        }
    }};
}

macro_rules! arg_mut {
    ($ptr:expr, $name:literal) => {{
        match unsafe { $ptr.as_mut() } {
            Some(r) => r,
            None => return fail(StrataStatus::NullArg, concat!($name, " is null")),
        }
    }};
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn strata_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread. Empty string when
/// nothing failed yet. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn strata_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `s` into caller storage with NUL termination; `*written` gets the
/// full length (excluding NUL) so a short buffer can be detected and resized.
fn copy_out(s: &str, buf: *mut c_char, cap: usize, written: *mut usize) -> StrataStatus {
    if !written.is_null() {
        unsafe { *written = s.len() };
    }
    if buf.is_null() || cap == 0 {
        return StrataStatus::Ok;
    }
    let n = s.len().min(cap - 1);
    unsafe {
        std::ptr::copy_nonoverlapping(s.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
    }
    StrataStatus::Ok
}

// ---------------------------------------------------------------- traces

/// Loads an access trace from a TOML file into a new handle.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer. On success `*out` owns the trace and must be
/// released with [`strata_trace_free`].
#[no_mangle]
pub unsafe extern "C" fn strata_trace_load(
    path: *const c_char,
    out: *mut *mut StrataTrace,
) -> StrataStatus {
    guarded(|| {
        let out = arg_mut!(out, "out");
        let path = arg_str!(path, "path");
        match AccessTrace::load(Path::new(path)) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(StrataTrace(t)));
                StrataStatus::Ok
            }
            Err(e @ TraceError::Io { .. }) => fail(StrataStatus::Io, e),
            Err(e) => fail(StrataStatus::Parse, e),
        }
    })
}

/// Number of events the trace defines.
///
/// # Safety
/// `trace` must be a live handle from [`strata_trace_load`]; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn strata_trace_event_count(
    trace: *const StrataTrace,
    out: *mut usize,
) -> StrataStatus {
    guarded(|| {
        let trace = arg_ref!(trace, "trace");
        let out = arg_mut!(out, "out");
        *out = trace.0.events.len();
        StrataStatus::Ok
    })
}

/// Releases a trace handle. Null is a no-op.
///
/// # Safety
/// `trace` must be null or a pointer obtained from [`strata_trace_load`]
/// that has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn strata_trace_free(trace: *mut StrataTrace) {
    if !trace.is_null() {
        drop(unsafe { Box::from_raw(trace) });
    }
}

// ---------------------------------------------------------------- matrices

/// Loads a hit-ratio matrix from a CSV report file.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer. On success `*out` must be released with
/// [`strata_matrix_free`].
#[no_mangle]
pub unsafe extern "C" fn strata_matrix_load_csv(
    path: *const c_char,
    out: *mut *mut StrataMatrix,
) -> StrataStatus {
    guarded(|| {
        let out = arg_mut!(out, "out");
        let path = arg_str!(path, "path");
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(StrataStatus::Io, format_args!("{path}: {e}")),
        };
        let rows = match report::from_csv::<report::MatrixRow>(&text) {
            Ok((rows, _)) => rows,
            Err(e) => return fail(StrataStatus::Parse, e),
        };
        match report::matrix_from_rows(&rows) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(StrataMatrix(m)));
                StrataStatus::Ok
            }
            Err(e) => fail(StrataStatus::Parse, e),
        }
    })
}

/// Writes the matrix dimensions. Either out-pointer may be null to skip it.
///
/// # Safety
/// `matrix` must be a live handle from [`strata_matrix_load_csv`].
#[no_mangle]
pub unsafe extern "C" fn strata_matrix_shape(
    matrix: *const StrataMatrix,
    events: *mut usize,
    locations: *mut usize,
) -> StrataStatus {
    guarded(|| {
        let matrix = arg_ref!(matrix, "matrix");
        if let Some(e) = unsafe { events.as_mut() } {
            *e = matrix.0.events().len();
        }
        if let Some(l) = unsafe { locations.as_mut() } {
            *l = matrix.0.locations().len();
        }
        StrataStatus::Ok
    })
}

/// Hit ratio of one cell, by event and location index.
///
/// # Safety
/// `matrix` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strata_matrix_ratio(
    matrix: *const StrataMatrix,
    event: usize,
    location: usize,
    out: *mut f64,
) -> StrataStatus {
    guarded(|| {
        let matrix = arg_ref!(matrix, "matrix");
        let out = arg_mut!(out, "out");
        if event >= matrix.0.events().len() || location >= matrix.0.locations().len() {
            return fail(
                StrataStatus::Invalid,
                format_args!("cell ({event}, {location}) out of range"),
            );
        }
        *out = matrix.0.ratio(event, location);
        StrataStatus::Ok
    })
}

/// Releases a matrix handle. Null is a no-op.
///
/// # Safety
/// `matrix` must be null or an unfreed pointer from
/// [`strata_matrix_load_csv`].
#[no_mangle]
pub unsafe extern "C" fn strata_matrix_free(matrix: *mut StrataMatrix) {
    if !matrix.is_null() {
        drop(unsafe { Box::from_raw(matrix) });
    }
}

// ---------------------------------------------------------------- templates

/// Classifies a matrix into a template with default settings, including the
/// read-around suppression and distinguisher passes.
///
/// # Safety
/// `matrix` must be a live handle and `out` writable. On success `*out`
/// must be released with [`strata_template_free`].
#[no_mangle]
pub unsafe extern "C" fn strata_classify(
    matrix: *const StrataMatrix,
    out: *mut *mut StrataTemplate,
) -> StrataStatus {
    guarded(|| {
        let matrix = arg_ref!(matrix, "matrix");
        let out = arg_mut!(out, "out");
        let cfg = ClassifierConfig::default();
        let template = classifier::classify(&matrix.0, &cfg)
            .and_then(|t| classifier::filter_readaround(&t, &matrix.0, &cfg.readaround));
        match template {
            Ok(t) => {
                *out = Box::into_raw(Box::new(StrataTemplate(t)));
                StrataStatus::Ok
            }
            Err(e) => fail(StrataStatus::Invalid, e),
        }
    })
}

/// Loads a template from a TOML file.
///
/// # Safety
/// `path` must point to a NUL-terminated string and `out` to writable
/// storage for one pointer. On success `*out` must be released with
/// [`strata_template_free`].
#[no_mangle]
pub unsafe extern "C" fn strata_template_load(
    path: *const c_char,
    out: *mut *mut StrataTemplate,
) -> StrataStatus {
    guarded(|| {
        let out = arg_mut!(out, "out");
        let path = arg_str!(path, "path");
        match ClassifiedTemplate::load(Path::new(path)) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(StrataTemplate(t)));
                StrataStatus::Ok
            }
            Err(e @ TemplateError::Io { .. }) => fail(StrataStatus::Io, e),
            Err(e) => fail(StrataStatus::Parse, e),
        }
    })
}

/// Saves a template to a TOML file.
///
/// # Safety
/// `template` must be a live handle; `path` must point to a NUL-terminated
/// string.
#[no_mangle]
pub unsafe extern "C" fn strata_template_save(
    template: *const StrataTemplate,
    path: *const c_char,
) -> StrataStatus {
    guarded(|| {
        let template = arg_ref!(template, "template");
        let path = arg_str!(path, "path");
        match template.0.save(Path::new(path)) {
            Ok(()) => StrataStatus::Ok,
            Err(e @ TemplateError::Io { .. }) => fail(StrataStatus::Io, e),
            Err(e) => fail(StrataStatus::Invalid, e),
        }
    })
}

/// Number of entries in the template.
///
/// # Safety
/// `template` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strata_template_entry_count(
    template: *const StrataTemplate,
    out: *mut usize,
) -> StrataStatus {
    guarded(|| {
        let template = arg_ref!(template, "template");
        let out = arg_mut!(out, "out");
        *out = template.0.entries.len();
        StrataStatus::Ok
    })
}

/// Shape and score of the entry at `index`.
///
/// # Safety
/// `template` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strata_template_entry_info(
    template: *const StrataTemplate,
    index: usize,
    out: *mut StrataEntryInfo,
) -> StrataStatus {
    guarded(|| {
        let template = arg_ref!(template, "template");
        let out = arg_mut!(out, "out");
        let entry = match template.0.entries.get(index) {
            Some(e) => e,
            None => return fail(StrataStatus::Invalid, format_args!("entry {index} out of range")),
        };
        *out = StrataEntryInfo {
            offset: entry.location.offset,
            granularity_bytes: entry.location.granularity.bytes(),
            score: entry.score,
            event_count: entry.events.len(),
            suppress_count: entry.suppress.len(),
        };
        StrataStatus::Ok
    })
}

/// Copies the entry's event group as a `+`-joined, NUL-terminated name into
/// `buf`. `*written` gets the full length so callers can grow a short
/// buffer; passing `cap` 0 only measures.
///
/// # Safety
/// `template` must be a live handle. `buf` must be null or point to `cap`
/// writable bytes; `written` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn strata_template_entry_events(
    template: *const StrataTemplate,
    index: usize,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> StrataStatus {
    guarded(|| {
        let template = arg_ref!(template, "template");
        let entry = match template.0.entries.get(index) {
            Some(e) => e,
            None => return fail(StrataStatus::Invalid, format_args!("entry {index} out of range")),
        };
        let joined = entry
            .events
            .iter()
            .map(|e| e.as_str())
            .collect::<Vec<_>>()
            .join("+");
        copy_out(&joined, buf, cap, written)
    })
}

/// Releases a template handle. Null is a no-op.
///
/// # Safety
/// `template` must be null or an unfreed pointer from a template-producing
/// call.
#[no_mangle]
pub unsafe extern "C" fn strata_template_free(template: *mut StrataTemplate) {
    if !template.is_null() {
        drop(unsafe { Box::from_raw(template) });
    }
}

// ---------------------------------------------------------------- scoring

/// Precision, recall, and F-score from match counts. All-zero counts score
/// a vacuous 1.0 across the board.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strata_score_counts(
    true_pos: u64,
    false_pos: u64,
    false_neg: u64,
    out: *mut StrataScore,
) -> StrataStatus {
    guarded(|| {
        let out = arg_mut!(out, "out");
        let (precision, recall, f_score) = score_counts(true_pos, false_pos, false_neg);
        *out = StrataScore {
            precision,
            recall,
            f_score,
        };
        StrataStatus::Ok
    })
}

/// Campaign cost forecast. `layer_bytes`/`layer_seconds` are parallel
/// arrays: granularity in bytes and measured total seconds per layer; pass
/// `n_layers` 0 for a flat sweep only (layered cost 0, speedup 0).
///
/// # Safety
/// `layer_bytes` and `layer_seconds` must be null or point to `n_layers`
/// readable elements each; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn strata_estimate(
    flat_seconds_per_mb: f64,
    region_mb: f64,
    keys: u32,
    layer_bytes: *const u64,
    layer_seconds: *const f64,
    n_layers: usize,
    out: *mut StrataEstimate,
) -> StrataStatus {
    guarded(|| {
        let out = arg_mut!(out, "out");
        let mut layers = Vec::with_capacity(n_layers);
        if n_layers > 0 {
            if layer_bytes.is_null() || layer_seconds.is_null() {
                return fail(StrataStatus::NullArg, "layer arrays are null");
            }
            for i in 0..n_layers {
                let bytes = unsafe { *layer_bytes.add(i) };
                let seconds = unsafe { *layer_seconds.add(i) };
                let granularity = match Granularity::new(bytes) {
                    Ok(g) => g,
                    Err(e) => return fail(StrataStatus::Invalid, e),
                };
                layers.push(LayerCostSpec {
                    granularity,
                    model: CostModel::Total { seconds },
                });
            }
        }
        let params = EstimateParams {
            flat_seconds_per_mb,
            region_mb,
            keys,
            samples_per_key: 1,
            layers,
        };
        match estimate_campaign(&params) {
            Ok(e) => {
                *out = StrataEstimate {
                    flat_seconds: e.flat_seconds,
                    layered_seconds: e.layered_seconds,
                    speedup: e.speedup.unwrap_or(0.0),
                };
                StrataStatus::Ok
            }
            Err(e) => fail(StrataStatus::Invalid, e),
        }
    })
}
