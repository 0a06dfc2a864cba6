use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use thermovisco_ffi::*;

const SMALL: &str = "[scheme]\nT = 1/40\ntau = 1/320\nh = 1/40\nn = 8\n";

fn parse(text: &str) -> (TvStatus, *mut TvConfig) {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { tv_config_parse(text.as_ptr(), &mut cfg) };
    (status, cfg)
}

fn last_error() -> String {
    let p = tv_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn step_through_small_run() {
    let (status, cfg) = parse(SMALL);
    assert_eq!(status, TvStatus::Ok);
    let total = unsafe { tv_config_steps(cfg) };
    assert_eq!(total, 8);

    let mut run = ptr::null_mut();
    assert_eq!(unsafe { tv_run_new(cfg, &mut run) }, TvStatus::Ok);
    unsafe { tv_config_free(cfg) };

    assert_eq!(unsafe { tv_run_step(run) }, TvStatus::Ok);
    assert_eq!(unsafe { tv_run_steps_done(run) }, 1);
    assert_eq!(unsafe { tv_run_to_end(run) }, TvStatus::Ok);
    assert_eq!(unsafe { tv_run_steps_done(run) }, total);
    assert_eq!(unsafe { tv_run_step(run) }, TvStatus::Finished);

    let nodes = unsafe { tv_run_num_nodes(run) };
    assert_eq!(nodes, 64);
    let mut y = vec![0.0; 2 * nodes];
    let mut theta = vec![0.0; nodes];
    assert_eq!(unsafe { tv_run_state(run, total, nodes, y.as_mut_ptr(), theta.as_mut_ptr()) }, TvStatus::Ok);
    assert!(theta.iter().all(|t| *t > 0.0));
    assert!(y.iter().all(|v| v.is_finite()));

    let mut summary = TvSummary::default();
    assert_eq!(unsafe { tv_run_summary(run, &mut summary) }, TvStatus::Ok);
    assert_eq!(summary.steps, total);
    assert_eq!(summary.all_pass, 1);
    assert!(summary.min_det > 0.2);

    assert_eq!(unsafe { tv_run_state(run, total + 1, nodes, y.as_mut_ptr(), ptr::null_mut()) }, TvStatus::InvalidArgument);
    assert!(last_error().contains("not computed"));
    unsafe { tv_run_free(run) };
}

#[test]
fn bad_config_reports_message() {
    let (status, cfg) = parse("[scheme]\ntau = 0.003\nh = 1/40\n");
    assert_eq!(status, TvStatus::Config);
    assert!(cfg.is_null());
    assert!(last_error().contains("h/tau"), "{}", last_error());

    let (status, _) = parse("[nope]\n");
    assert_eq!(status, TvStatus::Config);
}

#[test]
fn null_handles_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { tv_config_parse(ptr::null(), &mut out) }, TvStatus::NullPointer);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { tv_run_new(ptr::null(), &mut run) }, TvStatus::NullPointer);
    assert_eq!(unsafe { tv_run_step(ptr::null_mut()) }, TvStatus::NullPointer);
    assert_eq!(unsafe { tv_run_steps_done(ptr::null()) }, 0);
    unsafe {
        tv_run_free(ptr::null_mut());
        tv_config_free(ptr::null_mut());
    }
}

#[test]
fn set_tau_validates() {
    let cfg = tv_config_default();
    let steps = unsafe { tv_config_steps(cfg) };
    assert_eq!(unsafe { tv_config_set_tau(cfg, 1.0 / 640.0) }, TvStatus::Ok);
    assert_eq!(unsafe { tv_config_steps(cfg) }, 2 * steps);
    assert_eq!(unsafe { tv_config_set_tau(cfg, 0.003) }, TvStatus::Config);
    assert_eq!(unsafe { tv_config_steps(cfg) }, 2 * steps);
    unsafe { tv_config_free(cfg) };
}

#[test]
fn run_to_dir_writes_outputs() {
    let (_, cfg) = parse(SMALL);
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { tv_run_to_dir(cfg, path.as_ptr()) }, 0);
    assert!(dir.path().join("ledger.csv").exists());
    assert!(dir.path().join("manifest.json").exists());
    assert_eq!(unsafe { tv_run_to_dir(ptr::null(), path.as_ptr()) }, -1);
    unsafe { tv_config_free(cfg) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(tv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/thermovisco.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["tv_run_new", "tv_run_step", "tv_last_error", "TvSummary", "TV_STATUS_STEP_FAILED"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-x", "c"])
        .arg(&header)
        .output()
    else {
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
