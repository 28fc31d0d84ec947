//! C ABI over the planner, the envelope codec and headless scenario runs.
//!
//! Strings crossing the boundary are NUL-terminated UTF-8. Strings returned
//! through out-parameters are owned by the caller and must be released
//! with [`icps_string_free`]. On any status other than `ICPS_STATUS_OK`,
//! [`icps_last_error`] describes what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use icps::harness::{Harness, RunConfig, RunOutcome};
use icps::planner::Problem;
use icps::protocol::{decode_envelope, encode_line};
use icps::sim::Scenario;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    NoPlan = 4,
    InvalidEnvelope = 5,
    ScenarioError = 6,
    NotFinished = 7,
    Panic = 99,
}

/// A scenario run driven step by step.
pub struct IcpsRun {
    harness: Option<Harness>,
    outcome: Option<RunOutcome>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> Result<(), (IcpsStatus, String)>) -> IcpsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IcpsStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IcpsStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (IcpsStatus, String)> {
    if p.is_null() {
        return Err((IcpsStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (IcpsStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn write_str(out: *mut *mut c_char, text: String) -> Result<(), (IcpsStatus, String)> {
    if out.is_null() {
        return Err((IcpsStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(text).map_err(|e| (IcpsStatus::InvalidUtf8, e.to_string()))?;
    *out = c.into_raw();
    Ok(())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn icps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn icps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Solves a planning problem given as JSON and writes the plan, a JSON
/// array of step strings, to `out_plan`.
///
/// # Safety
/// `problem_json` must be a valid C string; `out_plan` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icps_planner_solve_json(problem_json: *const c_char, out_plan: *mut *mut c_char) -> IcpsStatus {
    guard(|| {
        let text = read_str(problem_json, "problem_json")?;
        let problem = Problem::from_json(text).map_err(|e| (IcpsStatus::ParseError, e.to_string()))?;
        let plan = problem.solve().map_err(|e| (IcpsStatus::NoPlan, e.to_string()))?;
        let steps = serde_json::to_string(&plan.step_names()).expect("strings serialize");
        write_str(out_plan, steps)
    })
}

/// Decodes one envelope line. On success `out` receives the canonical
/// re-encoding; on `ICPS_STATUS_INVALID_ENVELOPE` it receives the
/// structured error as JSON (`code`, `message`, `msg_id`).
///
/// # Safety
/// `line` must be a valid C string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icps_envelope_validate(line: *const c_char, out: *mut *mut c_char) -> IcpsStatus {
    guard(|| {
        if line.is_null() {
            return Err((IcpsStatus::NullArgument, "line is null".into()));
        }
        let bytes = CStr::from_ptr(line).to_bytes();
        match decode_envelope(bytes) {
            Ok(env) => {
                let canonical = encode_line(&env).map_err(|e| (IcpsStatus::InvalidEnvelope, e.to_string()))?;
                write_str(out, canonical.trim_end().to_string())
            }
            Err(e) => {
                let json = serde_json::json!({
                    "code": e.code,
                    "message": e.message,
                    "msg_id": e.msg_id,
                });
                write_str(out, json.to_string())?;
                Err((IcpsStatus::InvalidEnvelope, e.message))
            }
        }
    })
}

/// Starts a run of a scenario given as TOML text. `seed` overrides the
/// scenario's seed unless negative.
///
/// # Safety
/// `scenario_toml` must be a valid C string; `out_run` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icps_run_new(scenario_toml: *const c_char, seed: i64, out_run: *mut *mut IcpsRun) -> IcpsStatus {
    guard(|| {
        if out_run.is_null() {
            return Err((IcpsStatus::NullArgument, "out_run is null".into()));
        }
        let text = read_str(scenario_toml, "scenario_toml")?;
        let scenario = Scenario::parse(text).map_err(|e| (IcpsStatus::ScenarioError, e.to_string()))?;
        let cfg = RunConfig {
            seed: u64::try_from(seed).ok(),
            ..RunConfig::default()
        };
        let harness = Harness::new(scenario, &cfg).map_err(|e| (IcpsStatus::ScenarioError, e))?;
        *out_run = Box::into_raw(Box::new(IcpsRun {
            harness: Some(harness),
            outcome: None,
        }));
        Ok(())
    })
}

unsafe fn run_mut<'a>(run: *mut IcpsRun) -> Result<&'a mut IcpsRun, (IcpsStatus, String)> {
    run.as_mut().ok_or((IcpsStatus::NullArgument, "run is null".into()))
}

fn finish(run: &mut IcpsRun) {
    if let Some(h) = run.harness.take() {
        run.outcome = Some(h.finish());
    }
}

/// Advances the run by one simulated instant. `*out_more` is set to false
/// once the run has ended.
///
/// # Safety
/// `run` must come from [`icps_run_new`]; `out_more` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn icps_run_step(run: *mut IcpsRun, out_more: *mut bool) -> IcpsStatus {
    guard(|| {
        let run = run_mut(run)?;
        let more = match run.harness.as_mut() {
            Some(h) => h.step(),
            None => false,
        };
        if !more {
            finish(run);
        }
        if !out_more.is_null() {
            *out_more = more;
        }
        Ok(())
    })
}

/// Runs to the end.
///
/// # Safety
/// `run` must come from [`icps_run_new`].
#[no_mangle]
pub unsafe extern "C" fn icps_run_finish(run: *mut IcpsRun) -> IcpsStatus {
    guard(|| {
        let run = run_mut(run)?;
        if let Some(h) = run.harness.as_mut() {
            while h.step() {}
        }
        finish(run);
        Ok(())
    })
}

/// Current simulated time in milliseconds, or -1 for a NULL run.
///
/// # Safety
/// `run` must come from [`icps_run_new`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn icps_run_now_ms(run: *const IcpsRun) -> i64 {
    match run.as_ref() {
        Some(IcpsRun { harness: Some(h), .. }) => h.now(),
        Some(IcpsRun { outcome: Some(o), .. }) => o.report.sim_time_ms,
        _ => -1,
    }
}

unsafe fn finished_output(
    run: *mut IcpsRun,
    out: *mut *mut c_char,
    f: impl FnOnce(&RunOutcome) -> String,
) -> IcpsStatus {
    guard(|| {
        let run = run_mut(run)?;
        let Some(outcome) = run.outcome.as_ref() else {
            return Err((IcpsStatus::NotFinished, "run has not finished".into()));
        };
        write_str(out, f(outcome))
    })
}

/// Writes the run report as JSON. The run must have finished.
///
/// # Safety
/// `run` must come from [`icps_run_new`]; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icps_run_report_json(run: *mut IcpsRun, out: *mut *mut c_char) -> IcpsStatus {
    finished_output(run, out, |o| o.report.to_json())
}

/// Writes the event log as NDJSON. The run must have finished.
///
/// # Safety
/// `run` must come from [`icps_run_new`]; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icps_run_event_log(run: *mut IcpsRun, out: *mut *mut c_char) -> IcpsStatus {
    finished_output(run, out, |o| o.log.to_ndjson())
}

/// Releases a run. NULL is ignored.
///
/// # Safety
/// `run` must come from [`icps_run_new`] and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn icps_run_free(run: *mut IcpsRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
