//! C interface to the sleepstate library.
//!
//! Objects cross the boundary as opaque handles created by `*_read_csv`,
//! `ss_detect` or `ss_model_load` and released with the matching `*_free`.
//! Every fallible call returns an [`SsStatus`]; on failure the message is
//! available from [`ss_last_error_message`] on the same thread until the next
//! failing call. Panics never unwind into the caller: they are reported as
//! `SS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sleepstate::classify::{load_model, Model};
use sleepstate::edap::{edap, ToleranceSet};
use sleepstate::features::{
    build_named_features, rolling_max, rolling_mean, rolling_min, rolling_std, total_variation,
};
use sleepstate::io::{read_events_csv, read_predictions, read_series_csv, write_predictions};
use sleepstate::model::{EventClass, LabeledEvent, ScoredEvent, Series};
use sleepstate::rules::{detect_all, DetectorConfig};
use sleepstate::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    NotFound = 4,
    Parse = 5,
    Config = 6,
    InvalidData = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStat {
    Mean = 0,
    Max = 1,
    Min = 2,
    Std = 3,
    TotalVariation = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsEventClass {
    Onset = 0,
    Wakeup = 1,
}

/// Rule-detector parameters; obtain defaults from [`ss_detector_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsDetectorConfig {
    pub angle_change_threshold_deg: f64,
    pub smoothing_window_min: u32,
    pub min_window_min: u32,
    pub max_interruption_min: u32,
    pub nonwear_std_threshold_deg: f64,
    pub nonwear_min_duration_min: u32,
    pub night_boundary_hour: u32,
}

/// One scored event; its series id is read with [`ss_event_list_series_id`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsEvent {
    pub step: u64,
    pub event_class: SsEventClass,
    pub confidence: f64,
}

/// Opaque set of series read from a series CSV.
pub struct SsSeriesSet {
    series: Vec<Series>,
    ids: Vec<CString>,
}

/// Opaque list of scored events.
pub struct SsEventList {
    events: Vec<ScoredEvent>,
    ids: Vec<CString>,
}

/// Opaque list of ground-truth events.
pub struct SsGroundTruth {
    events: Vec<LabeledEvent>,
}

/// Opaque trained classifier.
pub struct SsModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => SsStatus::NotFound,
            Error::Io(_) => SsStatus::Io,
            Error::Csv(_)
            | Error::Header { .. }
            | Error::Parse(_)
            | Error::ColumnMismatch { .. }
            | Error::Model(_) => SsStatus::Parse,
            Error::Config(_) => SsStatus::Config,
            _ => SsStatus::InvalidData,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            set_last_error(&format!("panic: {msg}"));
            SsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SsStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn path_arg(path: *const c_char) -> FfiResult<String> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Failure(SsStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

fn open(path: &str) -> FfiResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::from(Error::Io(e)))
        .map_err(|Failure(s, m)| Failure(s, format!("{path}: {m}")))
}

fn c_ids<'a>(ids: impl Iterator<Item = &'a str>) -> FfiResult<Vec<CString>> {
    ids.map(|s| {
        CString::new(s).map_err(|_| {
            Failure(
                SsStatus::InvalidData,
                format!("series id {s:?} contains NUL"),
            )
        })
    })
    .collect()
}

fn event_list(events: Vec<ScoredEvent>) -> FfiResult<SsEventList> {
    let ids = c_ids(events.iter().map(|e| e.series_id.as_str()))?;
    Ok(SsEventList { events, ids })
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn ss_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Trailing-window statistic of `x[0..n]` written to `out[0..n]`.
///
/// # Safety
/// `x` and `out` must each point to `n` valid doubles (they may be NULL when
/// `n` is 0).
#[no_mangle]
pub unsafe extern "C" fn ss_rolling_stat(
    x: *const f64,
    n: usize,
    window: usize,
    stat: SsStat,
    out: *mut f64,
) -> SsStatus {
    guard(|| {
        if n == 0 {
            return Ok(());
        }
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let input = std::slice::from_raw_parts(x, n);
        let result = match stat {
            SsStat::Mean => rolling_mean(input, window),
            SsStat::Max => rolling_max(input, window),
            SsStat::Min => rolling_min(input, window),
            SsStat::Std => rolling_std(input, window),
            SsStat::TotalVariation => total_variation(input, window),
        }
        .map_err(|e| match e {
            Error::Config(m) => Failure(SsStatus::InvalidArgument, m),
            other => other.into(),
        })?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&result);
        Ok(())
    })
}

/// Reads a series CSV into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_series_set_read_csv(
    path: *const c_char,
    out: *mut *mut SsSeriesSet,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let (series, _) = read_series_csv(open(&path)?)?;
        let ids = c_ids(series.iter().map(|s| s.series_id.as_str()))?;
        store(out, SsSeriesSet { series, ids });
        Ok(())
    })
}

/// Number of series in the set (0 for NULL).
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_series_set_len(set: *const SsSeriesSet) -> usize {
    set.as_ref().map_or(0, |s| s.series.len())
}

/// Id of series `index`, owned by the set; NULL when out of range.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_series_set_series_id(
    set: *const SsSeriesSet,
    index: usize,
) -> *const c_char {
    set.as_ref()
        .and_then(|s| s.ids.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Number of samples in series `index`, or 0 when out of range.
///
/// # Safety
/// `set` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_series_set_series_len(set: *const SsSeriesSet, index: usize) -> usize {
    set.as_ref()
        .and_then(|s| s.series.get(index))
        .map_or(0, Series::len)
}

/// # Safety
/// `set` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_series_set_free(set: *mut SsSeriesSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

#[no_mangle]
pub extern "C" fn ss_detector_config_default() -> SsDetectorConfig {
    let d = DetectorConfig::default();
    SsDetectorConfig {
        angle_change_threshold_deg: d.angle_change_threshold_deg,
        smoothing_window_min: d.smoothing_window_min,
        min_window_min: d.min_window_min,
        max_interruption_min: d.max_interruption_min,
        nonwear_std_threshold_deg: d.nonwear_std_threshold_deg,
        nonwear_min_duration_min: d.nonwear_min_duration_min,
        night_boundary_hour: d.night_boundary_hour,
    }
}

/// Runs the rule detector on every series; `config` may be NULL for defaults.
///
/// # Safety
/// `set` must be a live handle, `config` NULL or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ss_detect(
    set: *const SsSeriesSet,
    config: *const SsDetectorConfig,
    out: *mut *mut SsEventList,
) -> SsStatus {
    guard(|| {
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = config
            .as_ref()
            .copied()
            .unwrap_or_else(|| ss_detector_config_default());
        let cfg = DetectorConfig {
            angle_change_threshold_deg: c.angle_change_threshold_deg,
            smoothing_window_min: c.smoothing_window_min,
            min_window_min: c.min_window_min,
            max_interruption_min: c.max_interruption_min,
            nonwear_std_threshold_deg: c.nonwear_std_threshold_deg,
            nonwear_min_duration_min: c.nonwear_min_duration_min,
            night_boundary_hour: c.night_boundary_hour,
        };
        let events = detect_all(&set.series, &cfg)?
            .into_iter()
            .flat_map(|(_, e)| e)
            .collect();
        store(out, event_list(events)?);
        Ok(())
    })
}

/// Reads a predictions CSV.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_event_list_read_csv(
    path: *const c_char,
    out: *mut *mut SsEventList,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        store(out, event_list(read_predictions(open(&path)?)?)?);
        Ok(())
    })
}

/// Writes the list as a predictions CSV.
///
/// # Safety
/// `list` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ss_event_list_write_csv(
    list: *const SsEventList,
    path: *const c_char,
) -> SsStatus {
    guard(|| {
        let list = list.as_ref().ok_or_else(|| null("list"))?;
        let path = path_arg(path)?;
        let file = File::create(&path).map_err(|e| Failure::from(Error::Io(e)))?;
        write_predictions(&list.events, BufWriter::new(file))?;
        Ok(())
    })
}

/// # Safety
/// `list` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_event_list_len(list: *const SsEventList) -> usize {
    list.as_ref().map_or(0, |l| l.events.len())
}

/// Copies event `index` into `*out`.
///
/// # Safety
/// `list` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_event_list_get(
    list: *const SsEventList,
    index: usize,
    out: *mut SsEvent,
) -> SsStatus {
    guard(|| {
        let list = list.as_ref().ok_or_else(|| null("list"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let e = list.events.get(index).ok_or_else(|| {
            Failure(
                SsStatus::InvalidArgument,
                format!(
                    "index {index} out of range for {} events",
                    list.events.len()
                ),
            )
        })?;
        *out = SsEvent {
            step: e.step,
            event_class: match e.class {
                EventClass::Onset => SsEventClass::Onset,
                EventClass::Wakeup => SsEventClass::Wakeup,
            },
            confidence: e.confidence,
        };
        Ok(())
    })
}

/// Series id of event `index`, owned by the list; NULL when out of range.
///
/// # Safety
/// `list` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_event_list_series_id(
    list: *const SsEventList,
    index: usize,
) -> *const c_char {
    list.as_ref()
        .and_then(|l| l.ids.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// # Safety
/// `list` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_event_list_free(list: *mut SsEventList) {
    if !list.is_null() {
        drop(Box::from_raw(list));
    }
}

/// Reads a ground-truth events CSV; unlabeled nights are skipped.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_ground_truth_read_csv(
    path: *const c_char,
    out: *mut *mut SsGroundTruth,
) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        let (events, _) = read_events_csv(open(&path)?)?;
        store(out, SsGroundTruth { events });
        Ok(())
    })
}

/// # Safety
/// `gt` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_ground_truth_len(gt: *const SsGroundTruth) -> usize {
    gt.as_ref().map_or(0, |g| g.events.len())
}

/// # Safety
/// `gt` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_ground_truth_free(gt: *mut SsGroundTruth) {
    if !gt.is_null() {
        drop(Box::from_raw(gt));
    }
}

/// Event detection average precision of `preds` against `gt`.
///
/// `tolerances` lists `n_tolerances` strictly increasing step tolerances;
/// pass NULL and 0 for the default set.
///
/// # Safety
/// Handles must be live, `tolerances` must hold `n_tolerances` values when
/// non-NULL, and `out_mean_ap` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_score(
    preds: *const SsEventList,
    gt: *const SsGroundTruth,
    tolerances: *const u64,
    n_tolerances: usize,
    out_mean_ap: *mut f64,
) -> SsStatus {
    guard(|| {
        let preds = preds.as_ref().ok_or_else(|| null("preds"))?;
        let gt = gt.as_ref().ok_or_else(|| null("gt"))?;
        if out_mean_ap.is_null() {
            return Err(null("out_mean_ap"));
        }
        let tol = if n_tolerances == 0 {
            ToleranceSet::default()
        } else {
            if tolerances.is_null() {
                return Err(null("tolerances"));
            }
            ToleranceSet::new(std::slice::from_raw_parts(tolerances, n_tolerances).to_vec())?
        };
        *out_mean_ap = edap(&preds.events, &gt.events, &tol, None)?.mean_ap;
        Ok(())
    })
}

/// Loads a model file written by `sleepstate train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_model_load(path: *const c_char, out: *mut *mut SsModel) -> SsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path)?;
        store(
            out,
            SsModel {
                model: load_model(open(&path)?)?,
            },
        );
        Ok(())
    })
}

/// Number of feature columns the model expects (0 for NULL).
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_model_n_features(model: *const SsModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.column_names().len())
}

/// Per-step sleep probabilities for series `index` of `set`, computing the
/// model's feature columns from the raw signal. `out_len` must equal the
/// series length.
///
/// # Safety
/// Handles must be live and `out` must point to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_model_predict(
    model: *const SsModel,
    set: *const SsSeriesSet,
    index: usize,
    out: *mut f64,
    out_len: usize,
) -> SsStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let set = set.as_ref().ok_or_else(|| null("set"))?;
        let series = set.series.get(index).ok_or_else(|| {
            Failure(
                SsStatus::InvalidArgument,
                format!(
                    "series index {index} out of range for {} series",
                    set.series.len()
                ),
            )
        })?;
        if out_len != series.len() {
            return Err(Failure(
                SsStatus::InvalidArgument,
                format!("out_len {out_len} but series has {} samples", series.len()),
            ));
        }
        if out_len == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let x = build_named_features(series, model.model.column_names())?;
        let p = model.model.predict_proba(&x)?;
        std::slice::from_raw_parts_mut(out, out_len).copy_from_slice(&p);
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_model_free(model: *mut SsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
