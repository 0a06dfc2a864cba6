//! C interface to the thermovisco simulator.
//!
//! Configs and runs are opaque handles created and released through this
//! API. Every fallible call returns a [`TvStatus`]; on failure the message is
//! available from [`tv_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use thermovisco::audit::audit_trajectory;
use thermovisco::cli;
use thermovisco::config::{load_config, parse_config};
use thermovisco::driver::{advance, initial_trajectory, SchemeConfig, Trajectory};
use thermovisco::mechanics::NewtonSettings;
use thermovisco::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    StepFailed = 4,
    Io = 5,
    Finished = 6,
    Internal = 7,
}

/// Parsed scheme configuration.
pub struct TvConfig {
    inner: SchemeConfig,
}

/// A trajectory being stepped forward.
pub struct TvRun {
    traj: Trajectory,
    settings: NewtonSettings,
}

/// Diagnostics of a completed or partial run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TvSummary {
    pub steps: usize,
    pub max_abs_drift: f64,
    pub min_det: f64,
    pub min_theta: f64,
    pub max_g: f64,
    pub v_final: f64,
    pub weighted_h1: f64,
    pub energy_budget: f64,
    /// 1 when every per-step invariant holds.
    pub all_pass: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(e: &Error) -> TvStatus {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) => TvStatus::Config,
        Error::Io(_) => TvStatus::Io,
        Error::Step { .. } | Error::MechanicalSolve { .. } | Error::ThermalSolve { .. } => TvStatus::StepFailed,
        _ => TvStatus::Internal,
    }
}

fn fail(e: Error) -> TvStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn guard(f: impl FnOnce() -> TvStatus) -> TvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("panic inside thermovisco");
            TvStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char) -> Result<&'a str, TvStatus> {
    if s.is_null() {
        set_error("null string argument");
        return Err(TvStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        TvStatus::InvalidArgument
    })
}

fn null(what: &str) -> TvStatus {
    set_error(format!("null {what}"));
    TvStatus::NullPointer
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reference configuration.
#[no_mangle]
pub extern "C" fn tv_config_default() -> *mut TvConfig {
    Box::into_raw(Box::new(TvConfig {
        inner: SchemeConfig::default(),
    }))
}

/// Parse a config from text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tv_config_parse(text: *const c_char, out: *mut *mut TvConfig) -> TvStatus {
    guard(|| {
        if out.is_null() {
            return null("output pointer");
        }
        let text = match str_arg(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_config(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TvConfig { inner }));
                TvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Load a config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tv_config_load(path: *const c_char, out: *mut *mut TvConfig) -> TvStatus {
    guard(|| {
        if out.is_null() {
            return null("output pointer");
        }
        let path = match str_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_config(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(TvConfig { inner }));
                TvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of time steps the config asks for; 0 for NULL.
///
/// # Safety
/// `cfg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_config_steps(cfg: *const TvConfig) -> usize {
    cfg.as_ref().map_or(0, |c| c.inner.steps())
}

/// Override the time step; fails when the config no longer validates.
///
/// # Safety
/// `cfg` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_config_set_tau(cfg: *mut TvConfig, tau: f64) -> TvStatus {
    guard(|| {
        let Some(c) = cfg.as_mut() else {
            return null("config");
        };
        let mut next = c.inner.clone();
        next.tau = tau;
        match next.validate() {
            Ok(()) => {
                c.inner = next;
                TvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tv_config_free(cfg: *mut TvConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Start a run from `cfg`. The config handle may be freed afterwards.
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tv_run_new(cfg: *const TvConfig, out: *mut *mut TvRun) -> TvStatus {
    guard(|| {
        let Some(c) = cfg.as_ref() else {
            return null("config");
        };
        if out.is_null() {
            return null("output pointer");
        }
        match initial_trajectory(&c.inner) {
            Ok(traj) => {
                *out = Box::into_raw(Box::new(TvRun {
                    traj,
                    settings: NewtonSettings::default(),
                }));
                TvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Advance one step. Returns `Finished` once the horizon is reached.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_run_step(run: *mut TvRun) -> TvStatus {
    guard(|| {
        let Some(r) = run.as_mut() else {
            return null("run");
        };
        if r.traj.steps() >= r.traj.config.steps() {
            return TvStatus::Finished;
        }
        match advance(&mut r.traj, &r.settings) {
            Ok(()) => TvStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Advance to the horizon.
///
/// # Safety
/// `run` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_run_to_end(run: *mut TvRun) -> TvStatus {
    loop {
        match tv_run_step(run) {
            TvStatus::Ok => continue,
            TvStatus::Finished => return TvStatus::Ok,
            s => return s,
        }
    }
}

/// Completed steps; 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_run_steps_done(run: *const TvRun) -> usize {
    run.as_ref().map_or(0, |r| r.traj.steps())
}

/// Grid nodes; 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tv_run_num_nodes(run: *const TvRun) -> usize {
    run.as_ref().map_or(0, |r| r.traj.grid.num_nodes())
}

/// Copy the state of step `k`: `y` gets `2 * nodes` values (x then y
/// component per node), `theta` gets `nodes` values. Either may be NULL.
///
/// # Safety
/// `run` must be a live handle; `y` and `theta`, when not NULL, must have
/// room for the stated number of doubles and `nodes` must match
/// [`tv_run_num_nodes`].
#[no_mangle]
pub unsafe extern "C" fn tv_run_state(run: *const TvRun, k: usize, nodes: usize, y: *mut f64, theta: *mut f64) -> TvStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return null("run");
        };
        if nodes != r.traj.grid.num_nodes() {
            set_error(format!("expected {} nodes, got {nodes}", r.traj.grid.num_nodes()));
            return TvStatus::InvalidArgument;
        }
        if k > r.traj.steps() {
            set_error(format!("step {k} not computed yet ({} done)", r.traj.steps()));
            return TvStatus::InvalidArgument;
        }
        if !y.is_null() {
            let out = std::slice::from_raw_parts_mut(y, 2 * nodes);
            for (i, v) in r.traj.y[k].0.iter().enumerate() {
                out[2 * i] = v[0];
                out[2 * i + 1] = v[1];
            }
        }
        if !theta.is_null() {
            let out = std::slice::from_raw_parts_mut(theta, nodes);
            out.copy_from_slice(&r.traj.theta[k].0);
        }
        TvStatus::Ok
    })
}

/// Audit the steps taken so far.
///
/// # Safety
/// `run` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn tv_run_summary(run: *const TvRun, out: *mut TvSummary) -> TvStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return null("run");
        };
        if out.is_null() {
            return null("output pointer");
        }
        match audit_trajectory(&r.traj) {
            Ok(a) => {
                let m = &a.monitors;
                *out = TvSummary {
                    steps: r.traj.steps(),
                    max_abs_drift: m.max_abs_drift,
                    min_det: m.min_det,
                    min_theta: m.min_theta,
                    max_g: m.max_g,
                    v_final: m.v_final,
                    weighted_h1: m.weighted_h1,
                    energy_budget: m.energy_budget,
                    all_pass: a.all_pass() as i32,
                };
                TvStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tv_run_free(run: *mut TvRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Full run with ledger, snapshots and manifest written into `out_dir`.
/// Returns the command line exit code (0 success, 1 output, 2 config,
/// 3 step failure, 4 invariant failure), or -1 for bad arguments.
///
/// # Safety
/// `cfg` must be a live handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tv_run_to_dir(cfg: *const TvConfig, out_dir: *const c_char) -> i32 {
    let Some(c) = cfg.as_ref() else {
        null("config");
        return -1;
    };
    let Ok(dir) = str_arg(out_dir) else {
        return -1;
    };
    let mut log = Vec::new();
    let code = catch_unwind(AssertUnwindSafe(|| cli::run_config(&c.inner, Path::new(dir), &mut log))).unwrap_or(-1);
    if code != 0 {
        set_error(String::from_utf8_lossy(&log).trim().to_string());
    }
    code
}
