//! Command implementations behind the `thermovisco` binary.
//!
//! Exit codes: 0 success, 1 output could not be written, 2 invalid
//! configuration or arguments, 3 a time step failed, 4 an invariant or
//! oracle check failed.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::audit::{audit_trajectory, InvariantCheck};
use crate::config::load_config;
use crate::driver::{advance, initial_trajectory, SchemeConfig};
use crate::error::Error;
use crate::grid;
use crate::io::{self, Diagnostics, RunManifest};
use crate::mechanics::NewtonSettings;
use crate::oracles::{self, Constitutive, OracleReport};
use crate::study::{run_study, StudyMode, STUDY_CHECK_COLUMNS, STUDY_COLUMNS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STEP: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Exit code for an error raised while setting up or running a scheme.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Step { .. } => EXIT_STEP,
        Error::Config(_) | Error::InvalidParameter(_) => EXIT_CONFIG,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_STEP,
    }
}

fn failed_step(e: &Error) -> Option<usize> {
    match e {
        Error::Step { step, .. } => Some(*step),
        _ => None,
    }
}

/// `run <config> <outdir>`.
pub fn cmd_run(config_path: &Path, out_dir: &Path, log: &mut dyn Write) -> i32 {
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    run_config(&cfg, out_dir, log)
}

/// Run an already parsed config and write all outputs into `out_dir`.
pub fn run_config(cfg: &SchemeConfig, out_dir: &Path, log: &mut dyn Write) -> i32 {
    let start = Instant::now();
    if let Err(e) = io::ensure_dir(out_dir) {
        let _ = writeln!(log, "error: {e}");
        return EXIT_IO;
    }
    let mut manifest = RunManifest::new("run", cfg);
    let mut traj = match initial_trajectory(cfg) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            return exit_code_for(&e);
        }
    };
    let settings = NewtonSettings::default();
    for _ in 0..cfg.steps() {
        if let Err(e) = advance(&mut traj, &settings) {
            let last = traj.y.last().expect("initial state");
            let diag = Diagnostics {
                error: e.to_string(),
                failed_step: failed_step(&e),
                completed_steps: traj.steps(),
                last_min_det: grid::min_det(&traj.grid, last).ok(),
                last_min_theta: traj.theta.last().map(|t| t.min()),
            };
            let _ = writeln!(log, "error: {e}");
            let code = exit_code_for(&e);
            let path = out_dir.join("diagnostics.json");
            if io::write_json(&path, &diag).is_ok() {
                manifest.outputs.push("diagnostics.json".into());
            }
            manifest.exit_code = code;
            manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
            let _ = manifest.write(out_dir);
            return code;
        }
    }
    let audit = match audit_trajectory(&traj) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(log, "error: audit failed: {e}");
            return EXIT_STEP;
        }
    };
    let written = io::write_ledger(&out_dir.join("ledger.csv"), &audit.ledger)
        .and_then(|_| io::write_snapshots(out_dir, &traj));
    let snapshots = match written {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            return EXIT_IO;
        }
    };
    manifest.outputs.push("ledger.csv".into());
    manifest.outputs.extend(snapshots);
    manifest.invariants = audit.invariants();
    manifest.all_pass = audit.all_pass();
    manifest.exit_code = if manifest.all_pass { EXIT_OK } else { EXIT_INVARIANT };
    manifest.outputs.push("manifest.json".into());
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    for c in manifest.invariants.iter().filter(|c| !c.pass) {
        let _ = writeln!(log, "invariant failed: {} (worst {:e})", c.name, c.worst);
    }
    if let Err(e) = manifest.write(out_dir) {
        let _ = writeln!(log, "error: {e}");
        return EXIT_IO;
    }
    let _ = writeln!(
        log,
        "{} steps, max |drift| {:e}, min det {:.4}, min theta {:.4}, exit {}",
        traj.steps(),
        audit.monitors.max_abs_drift,
        audit.monitors.min_det,
        audit.monitors.min_theta,
        manifest.exit_code
    );
    manifest.exit_code
}

/// `study <config> --mode {tau|h|eps} --levels N <outdir>`.
pub fn cmd_study(config_path: &Path, mode: StudyMode, levels: usize, out_dir: &Path, parallel: bool, log: &mut dyn Write) -> i32 {
    let start = Instant::now();
    let cfg = match load_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = io::ensure_dir(out_dir) {
        let _ = writeln!(log, "error: {e}");
        return EXIT_IO;
    }
    let report = match run_study(&cfg, mode, levels, parallel) {
        Ok(r) => r,
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            return exit_code_for(&e);
        }
    };
    let mut manifest = RunManifest::new(&format!("study --mode {mode} --levels {levels}"), &cfg);
    let check_rows = report.checks.iter().map(|c| {
        vec![
            c.name.clone(),
            format!("{:?}", c.value),
            format!("{:?}", c.limit),
            c.pass.to_string(),
        ]
    });
    let written = io::write_csv(
        &out_dir.join("study.csv"),
        io::STUDY_SCHEMA,
        &STUDY_COLUMNS,
        report.levels.iter().map(|l| l.csv_row()),
    )
    .and_then(|_| io::write_csv(&out_dir.join("study_checks.csv"), io::STUDY_CHECKS_SCHEMA, &STUDY_CHECK_COLUMNS, check_rows));
    if let Err(e) = written {
        let _ = writeln!(log, "error: {e}");
        return EXIT_IO;
    }
    manifest.outputs = vec!["study.csv".into(), "study_checks.csv".into(), "manifest.json".into()];
    manifest.invariants = report
        .checks
        .iter()
        .map(|c| InvariantCheck {
            name: c.name.clone(),
            worst: c.value,
            pass: c.pass,
        })
        .chain(report.levels.iter().map(|l| InvariantCheck {
            name: format!("level {} invariants", l.level),
            worst: if l.invariants_pass { 0.0 } else { 1.0 },
            pass: l.invariants_pass,
        }))
        .collect();
    manifest.all_pass = report.all_pass();
    manifest.exit_code = if manifest.all_pass { EXIT_OK } else { EXIT_INVARIANT };
    manifest.wall_clock_seconds = start.elapsed().as_secs_f64();
    for c in &report.checks {
        let _ = writeln!(log, "{:40} {:12.4e} <= {:10.4e}  {}", c.name, c.value, c.limit, if c.pass { "ok" } else { "FAIL" });
    }
    if let Err(e) = manifest.write(out_dir) {
        let _ = writeln!(log, "error: {e}");
        return EXIT_IO;
    }
    manifest.exit_code
}

/// `verify [--seed S]`: JSON report on `out`, failing check names on `log`.
pub fn cmd_verify(model: &dyn Constitutive, seed: u64, out: &mut dyn Write, log: &mut dyn Write) -> i32 {
    let reports: Vec<OracleReport> = oracles::run_verification(model, seed);
    let text = match serde_json::to_string_pretty(&reports) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(log, "error: {e}");
            return EXIT_IO;
        }
    };
    if writeln!(out, "{text}").is_err() {
        return EXIT_IO;
    }
    let failed: Vec<&OracleReport> = reports.iter().filter(|r| !r.pass).collect();
    for r in &failed {
        let _ = writeln!(
            log,
            "check failed: {} (max error {:e} > {:e}); worst case: {}",
            r.name, r.max_error, r.tolerance, r.worst_case
        );
    }
    if failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_INVARIANT
    }
}
