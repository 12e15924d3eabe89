//! C interface to the netrtk simulator.
//!
//! Scenarios and finished runs are opaque handles owned by the caller and
//! released with the matching `_free` function. Every fallible call returns
//! a `NetrtkStatus`; on failure `netrtk_last_error` describes what went wrong
//! on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use netrtk::adversary::AttackKind;
use netrtk::harness::{parse_key_values, run_scenario, write_records_csv, HarnessError, RunOutput, ScenarioConfig, Transport};
use netrtk::rover::SolutionMode;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetrtkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidScenario = 3,
    Transport = 4,
    Io = 5,
    OutOfRange = 6,
    UnknownKey = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetrtkTransport {
    InProcess = 0,
    Tcp = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetrtkMode {
    None = 0,
    Standalone = 1,
    Dgnss = 2,
    Float = 3,
    Fixed = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetrtkAttack {
    None = 0,
    SyncSpoof = 1,
    AsyncSpoof = 2,
    Jam = 3,
}

/// One rover epoch. Position fields are NaN when the rover had no solution.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NetrtkEpoch {
    /// s since scenario start
    pub t: f64,
    pub truth_ecef: [f64; 3],
    pub solution_ecef: [f64; 3],
    /// m, local east/north/up at the truth position
    pub error_enu: [f64; 3],
    pub mode: NetrtkMode,
    pub n_sats: u32,
    pub accepted: bool,
    pub station_healthy: bool,
    pub station_tracked: u32,
    pub attack: NetrtkAttack,
}

/// A parsed scenario.
pub struct NetrtkScenario {
    cfg: ScenarioConfig,
}

/// The records and summary of a finished run.
pub struct NetrtkRun {
    out: RunOutput,
    summary_text: String,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: NetrtkStatus, msg: impl Into<String>) -> NetrtkStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn harness_status(e: HarnessError) -> NetrtkStatus {
    let status = match &e {
        HarnessError::Config(_) => NetrtkStatus::InvalidScenario,
        HarnessError::Transport(_) | HarnessError::Wire(_) => NetrtkStatus::Transport,
        HarnessError::Io(_) => NetrtkStatus::Io,
    };
    fail(status, e.to_string())
}

fn guarded(f: impl FnOnce() -> NetrtkStatus) -> NetrtkStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(NetrtkStatus::Panic, "internal panic"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, NetrtkStatus> {
    if p.is_null() {
        return Err(fail(NetrtkStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(NetrtkStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

macro_rules! non_null {
    ($p:expr, $what:literal) => {
        match unsafe { $p.as_ref() } {
            Some(v) => v,
            None => return fail(NetrtkStatus::NullPointer, concat!($what, " is null")),
        }
    };
}

macro_rules! non_null_mut {
    ($p:expr, $what:literal) => {
        match unsafe { $p.as_mut() } {
            Some(v) => v,
            None => return fail(NetrtkStatus::NullPointer, concat!($what, " is null")),
        }
    };
}

/// Copies `text` NUL-terminated into `buf`. `needed` (optional) receives the
/// size including the terminator.
unsafe fn copy_out(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> NetrtkStatus {
    let len = text.len() + 1;
    if !needed.is_null() {
        *needed = len;
    }
    if buf.is_null() || cap < len {
        return fail(NetrtkStatus::BufferTooSmall, format!("{len} bytes needed"));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    NetrtkStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn netrtk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null; `needed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn netrtk_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> NetrtkStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(&msg, buf, cap, needed)
}

/// Parses a scenario from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netrtk_scenario_from_str(toml: *const c_char, out: *mut *mut NetrtkScenario) -> NetrtkStatus {
    guarded(|| {
        let out = non_null_mut!(out, "out");
        *out = ptr::null_mut();
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ScenarioConfig::from_toml_str(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(NetrtkScenario { cfg }));
                NetrtkStatus::Ok
            }
            Err(e) => harness_status(e),
        }
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netrtk_scenario_load(path: *const c_char, out: *mut *mut NetrtkScenario) -> NetrtkStatus {
    guarded(|| {
        let out = non_null_mut!(out, "out");
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ScenarioConfig::load(path) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(NetrtkScenario { cfg }));
                NetrtkStatus::Ok
            }
            Err(e) => harness_status(e),
        }
    })
}

/// # Safety
/// `scenario` must come from a `netrtk_scenario_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn netrtk_scenario_set_seed(scenario: *mut NetrtkScenario, seed: u64) -> NetrtkStatus {
    non_null_mut!(scenario, "scenario").cfg.seed = seed;
    NetrtkStatus::Ok
}

/// # Safety
/// `scenario` must come from a `netrtk_scenario_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn netrtk_scenario_set_gate(scenario: *mut NetrtkScenario, enabled: bool) -> NetrtkStatus {
    non_null_mut!(scenario, "scenario").cfg.gate.enabled = enabled;
    NetrtkStatus::Ok
}

/// # Safety
/// `scenario` must come from a `netrtk_scenario_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn netrtk_scenario_set_transport(
    scenario: *mut NetrtkScenario,
    transport: NetrtkTransport,
) -> NetrtkStatus {
    non_null_mut!(scenario, "scenario").cfg.transport = match transport {
        NetrtkTransport::InProcess => Transport::InProcess,
        NetrtkTransport::Tcp => Transport::Tcp,
    };
    NetrtkStatus::Ok
}

/// Number of epochs the scenario will simulate.
///
/// # Safety
/// `scenario` must be null or come from a `netrtk_scenario_*` constructor.
#[no_mangle]
pub unsafe extern "C" fn netrtk_scenario_epochs(scenario: *const NetrtkScenario) -> usize {
    scenario.as_ref().map_or(0, |s| s.cfg.epochs())
}

/// # Safety
/// `scenario` must be null or come from a `netrtk_scenario_*` constructor,
/// and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn netrtk_scenario_free(scenario: *mut NetrtkScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the scenario to completion. The scenario handle stays valid.
///
/// # Safety
/// `scenario` must come from a `netrtk_scenario_*` constructor; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netrtk_run(scenario: *const NetrtkScenario, out: *mut *mut NetrtkRun) -> NetrtkStatus {
    guarded(|| {
        let out = non_null_mut!(out, "out");
        *out = ptr::null_mut();
        let scenario = non_null!(scenario, "scenario");
        match run_scenario(&scenario.cfg) {
            Ok(run) => {
                let summary_text = run.summary.to_key_values();
                *out = Box::into_raw(Box::new(NetrtkRun { out: run, summary_text }));
                NetrtkStatus::Ok
            }
            Err(e) => harness_status(e),
        }
    })
}

/// # Safety
/// `run` must be null or come from `netrtk_run`.
#[no_mangle]
pub unsafe extern "C" fn netrtk_run_epoch_count(run: *const NetrtkRun) -> usize {
    run.as_ref().map_or(0, |r| r.out.records.len())
}

/// # Safety
/// `run` must come from `netrtk_run`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netrtk_run_epoch(run: *const NetrtkRun, index: usize, out: *mut NetrtkEpoch) -> NetrtkStatus {
    let run = non_null!(run, "run");
    let out = non_null_mut!(out, "out");
    let Some(r) = run.out.records.get(index) else {
        return fail(NetrtkStatus::OutOfRange, format!("epoch {index} of {}", run.out.records.len()));
    };
    *out = NetrtkEpoch {
        t: r.t,
        truth_ecef: [r.truth.x, r.truth.y, r.truth.z],
        solution_ecef: [r.solution.position_ecef.x, r.solution.position_ecef.y, r.solution.position_ecef.z],
        error_enu: [r.enu_error.x, r.enu_error.y, r.enu_error.z],
        mode: match r.mode {
            SolutionMode::None => NetrtkMode::None,
            SolutionMode::Standalone => NetrtkMode::Standalone,
            SolutionMode::Dgnss => NetrtkMode::Dgnss,
            SolutionMode::Float => NetrtkMode::Float,
            SolutionMode::Fixed => NetrtkMode::Fixed,
        },
        n_sats: r.solution.n_sats as u32,
        accepted: r.verdict.accept,
        station_healthy: r.station_healthy,
        station_tracked: r.station_tracked as u32,
        attack: match r.attack {
            None => NetrtkAttack::None,
            Some(AttackKind::SyncSpoof) => NetrtkAttack::SyncSpoof,
            Some(AttackKind::AsyncSpoof) => NetrtkAttack::AsyncSpoof,
            Some(AttackKind::Jam) => NetrtkAttack::Jam,
        },
    };
    NetrtkStatus::Ok
}

/// Numeric summary metric by key, e.g. `rms_3d_attack` or `fix_ratio`.
/// Metrics undefined for this run come back as NaN.
///
/// # Safety
/// `run` must come from `netrtk_run`; `key` must be a NUL-terminated string;
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn netrtk_run_summary_value(
    run: *const NetrtkRun,
    key: *const c_char,
    value: *mut f64,
) -> NetrtkStatus {
    let run = non_null!(run, "run");
    let value = non_null_mut!(value, "value");
    let key = match str_arg(key, "key") {
        Ok(k) => k,
        Err(s) => return s,
    };
    let kv = match parse_key_values(&run.summary_text) {
        Ok(kv) => kv,
        Err(e) => return harness_status(e),
    };
    match kv.get(key).map(String::as_str) {
        Some("na") => *value = f64::NAN,
        Some(v) => match v.parse() {
            Ok(v) => *value = v,
            Err(_) => return fail(NetrtkStatus::UnknownKey, format!("{key} is not numeric")),
        },
        None => return fail(NetrtkStatus::UnknownKey, format!("no metric {key}")),
    }
    NetrtkStatus::Ok
}

/// Copies the `key: value` summary into `buf`.
///
/// # Safety
/// `run` must come from `netrtk_run`; `buf` must be valid for `cap` bytes or
/// null; `needed` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn netrtk_run_summary_text(
    run: *const NetrtkRun,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> NetrtkStatus {
    let run = non_null!(run, "run");
    copy_out(&run.summary_text, buf, cap, needed)
}

/// Writes the per-epoch records as CSV.
///
/// # Safety
/// `run` must come from `netrtk_run`; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn netrtk_run_write_csv(run: *const NetrtkRun, path: *const c_char) -> NetrtkStatus {
    guarded(|| {
        let run = non_null!(run, "run");
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let result = std::fs::File::create(path)
            .map(std::io::BufWriter::new)
            .and_then(|w| write_records_csv(&run.out.records, w));
        match result {
            Ok(()) => NetrtkStatus::Ok,
            Err(e) => fail(NetrtkStatus::Io, format!("{path}: {e}")),
        }
    })
}

/// # Safety
/// `run` must be null or come from `netrtk_run`, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn netrtk_run_free(run: *mut NetrtkRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
