//! C interface to the `auv-nsb` simulator.
//!
//! Scenarios and logs are opaque handles owned by the caller and released
//! with the matching `*_free`. Every fallible call returns an [`AuvStatus`];
//! the message of the last failure on the calling thread is available from
//! [`auv_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use auv_nsb::analysis::{check_conditions, compute_metrics, lookahead_lower_bound, StabilityReport};
use auv_nsb::telemetry::header;
use auv_nsb::{Error, Scenario, SimLog};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuvStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    /// The simulation left its domain (pitch, non-finite state, irregular path).
    Runtime = 3,
    Io = 4,
    Utf8 = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Opaque scenario handle.
pub struct AuvScenario(Scenario);

/// Opaque simulation log handle.
pub struct AuvLog {
    log: SimLog,
    header: Vec<CString>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AuvStabilityReport {
    pub n: usize,
    pub kappa_max: f64,
    pub iota_max: f64,
    pub theta_p_max: f64,
    pub ratio_v_min: f64,
    pub ratio_w_min: f64,
    pub delta0: f64,
    pub delta0_lower_bound: f64,
    pub damping_ok: bool,
    pub kappa_ok: bool,
    pub iota_ok: bool,
    pub theta_p_ok: bool,
    pub delta0_ok: bool,
    pub overall_ok: bool,
}

impl From<&StabilityReport> for AuvStabilityReport {
    fn from(r: &StabilityReport) -> Self {
        Self {
            n: r.n,
            kappa_max: r.kappa_max,
            iota_max: r.iota_max,
            theta_p_max: r.theta_p_max,
            ratio_v_min: r.ratio_v_min,
            ratio_w_min: r.ratio_w_min,
            delta0: r.delta0,
            delta0_lower_bound: r.delta0_lower_bound,
            damping_ok: r.damping_ok,
            kappa_ok: r.kappa_ok,
            iota_ok: r.iota_ok,
            theta_p_ok: r.theta_p_ok,
            delta0_ok: r.delta0_ok,
            overall_ok: r.overall_ok,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(AuvStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => AuvStatus::Config,
            Error::PitchDomain { .. } | Error::NonFinite { .. } | Error::IrregularPath(_) => AuvStatus::Runtime,
            Error::Io(_) | Error::Csv(_) | Error::LogFormat(_) => AuvStatus::Io,
        };
        Fail(code, e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> AuvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AuvStatus::Ok
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("panic: {msg}"));
            AuvStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(AuvStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Fail(AuvStatus::Utf8, format!("{what}: {e}")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(AuvStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(AuvStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn auv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Built-in default scenario (three vehicles on the spiral).
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn auv_scenario_default(out: *mut *mut AuvScenario) -> AuvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let sc = Scenario::with_overrides(&[])?;
        *out = Box::into_raw(Box::new(AuvScenario(sc)));
        Ok(())
    })
}

/// Parses a scenario from TOML text. Relative `vehicle_file` entries resolve
/// against the working directory.
///
/// # Safety
/// `toml` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auv_scenario_from_toml(toml: *const c_char, out: *mut *mut AuvScenario) -> AuvStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        out_arg(out, "out")?;
        let sc = Scenario::from_toml_str(text, None, &[])?;
        *out = Box::into_raw(Box::new(AuvScenario(sc)));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auv_scenario_from_file(path: *const c_char, out: *mut *mut AuvScenario) -> AuvStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let sc = Scenario::from_file(Path::new(path), &[])?;
        *out = Box::into_raw(Box::new(AuvScenario(sc)));
        Ok(())
    })
}

/// Applies a `key=value` override such as `guidance.delta0=6`. The
/// scenario is left unchanged on failure.
///
/// # Safety
/// `sc` must be a live handle, `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn auv_scenario_set(sc: *mut AuvScenario, assignment: *const c_char) -> AuvStatus {
    guard(|| {
        let a = str_arg(assignment, "assignment")?;
        let sc = sc
            .as_mut()
            .ok_or_else(|| Fail(AuvStatus::NullPointer, "scenario is null".into()))?;
        let next = Scenario::from_toml_str(&sc.0.to_toml(), None, &[a.to_string()])?;
        sc.0 = next;
        Ok(())
    })
}

/// # Safety
/// `sc` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn auv_scenario_n_vehicles(sc: *const AuvScenario) -> usize {
    sc.as_ref().map_or(0, |s| s.0.n_vehicles())
}

/// # Safety
/// `sc` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn auv_scenario_free(sc: *mut AuvScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Runs the scenario to completion.
///
/// # Safety
/// `sc` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auv_run(sc: *const AuvScenario, out: *mut *mut AuvLog) -> AuvStatus {
    guard(|| {
        let sc = ref_arg(sc, "scenario")?;
        out_arg(out, "out")?;
        let log = auv_nsb::run(&sc.0)?;
        let header = header(log.n)
            .into_iter()
            .map(|h| CString::new(h).expect("ASCII column name"))
            .collect();
        *out = Box::into_raw(Box::new(AuvLog { log, header }));
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn auv_log_rows(log: *const AuvLog) -> usize {
    log.as_ref().map_or(0, |l| l.log.records.len())
}

/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn auv_log_columns(log: *const AuvLog) -> usize {
    log.as_ref().map_or(0, |l| l.header.len())
}

/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn auv_log_n_vehicles(log: *const AuvLog) -> usize {
    log.as_ref().map_or(0, |l| l.log.n)
}

/// Name of CSV column `col`, or null when out of range. Owned by the log.
///
/// # Safety
/// `log` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn auv_log_column_name(log: *const AuvLog, col: usize) -> *const c_char {
    log.as_ref()
        .and_then(|l| l.header.get(col))
        .map_or(std::ptr::null(), |c| c.as_ptr())
}

/// Value at `(row, col)` in CSV column order; `colav_active` reads 0 or 1.
///
/// # Safety
/// `log` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auv_log_value(log: *const AuvLog, row: usize, col: usize, out: *mut f64) -> AuvStatus {
    guard(|| {
        let l = ref_arg(log, "log")?;
        out_arg(out, "out")?;
        let r = l
            .log
            .records
            .get(row)
            .ok_or_else(|| Fail(AuvStatus::OutOfRange, format!("row {row} of {}", l.log.records.len())))?;
        let vals = SimLog::row_values(r);
        *out = *vals
            .get(col)
            .ok_or_else(|| Fail(AuvStatus::OutOfRange, format!("column {col} of {}", vals.len())))?;
        Ok(())
    })
}

/// # Safety
/// `log` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn auv_log_write_csv(log: *const AuvLog, path: *const c_char) -> AuvStatus {
    guard(|| {
        let l = ref_arg(log, "log")?;
        let path = str_arg(path, "path")?;
        l.log.write_csv_file(Path::new(path))?;
        Ok(())
    })
}

/// Metrics summary as a JSON string. Release it with [`auv_string_free`].
///
/// # Safety
/// `log` must be a live handle, `sc` null or a live handle, `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn auv_log_metrics_json(
    log: *const AuvLog,
    sc: *const AuvScenario,
    out: *mut *mut c_char,
) -> AuvStatus {
    guard(|| {
        let l = ref_arg(log, "log")?;
        out_arg(out, "out")?;
        let m = compute_metrics(&l.log, sc.as_ref().map(|s| &s.0));
        let text = serde_json::to_string(&m).expect("serializable");
        *out = CString::new(text).expect("no NUL in JSON").into_raw();
        Ok(())
    })
}

/// # Safety
/// `log` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn auv_log_free(log: *mut AuvLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn auv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Lower bound on the lookahead distance; infinity when the curvature
/// conditions fail.
#[no_mangle]
pub extern "C" fn auv_lookahead_lower_bound(n: usize, ratio_v: f64, ratio_w: f64, iota_max: f64, kappa_max: f64) -> f64 {
    lookahead_lower_bound(n, ratio_v, ratio_w, iota_max, kappa_max)
}

/// Evaluates the stability conditions for the scenario's fleet, path,
/// current and lookahead, scanning surge speeds up to `u_max`.
///
/// # Safety
/// `sc` must be a live handle, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn auv_check(sc: *const AuvScenario, u_max: f64, out: *mut AuvStabilityReport) -> AuvStatus {
    guard(|| {
        let s = &ref_arg(sc, "scenario")?.0;
        out_arg(out, "out")?;
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(Fail(AuvStatus::OutOfRange, format!("u_max = {u_max}")));
        }
        let r = check_conditions(
            &s.vehicle,
            &s.path,
            s.n_vehicles(),
            s.current_vec().norm(),
            s.guidance.delta0,
            u_max,
        )?;
        *out = (&r).into();
        Ok(())
    })
}
