//! Refinement ladders in `τ`, the delay `h` and the regularization `ε`, with
//! the comparisons that each ladder is expected to pass.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audit::{audit_trajectory, reference_test_functions, weak_heat_residual, AuditReport};
use crate::driver::{run_trajectory, SchemeConfig, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMode {
    Tau,
    H,
    Eps,
}

impl FromStr for StudyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(Self::Tau),
            "h" => Ok(Self::H),
            "eps" => Ok(Self::Eps),
            other => Err(Error::Config(format!("unknown study mode '{other}' (tau, h or eps)"))),
        }
    }
}

impl std::fmt::Display for StudyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Tau => "tau",
            Self::H => "h",
            Self::Eps => "eps",
        })
    }
}

/// Config of ladder level `j`: `τ/2^j`; `h/2^j` with `τ = h_j/8`; or `ε/10^j`.
pub fn level_config(base: &SchemeConfig, mode: StudyMode, j: usize) -> SchemeConfig {
    let mut c = base.clone();
    match mode {
        StudyMode::Tau => c.tau = base.tau / 2f64.powi(j as i32),
        StudyMode::H => {
            c.h = base.h / 2f64.powi(j as i32);
            c.tau = c.h / 8.0;
        }
        StudyMode::Eps => c.eps = base.eps / 10f64.powi(j as i32),
    }
    c
}

/// Summary of one ladder level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyLevel {
    pub level: usize,
    pub tau: f64,
    pub h: f64,
    pub eps: f64,
    pub steps: usize,
    pub max_abs_drift: f64,
    pub max_g: f64,
    pub v_final: f64,
    pub eps_monitor: f64,
    pub weighted_h1: f64,
    pub energy_budget: f64,
    pub weak_residual: f64,
    pub min_det: f64,
    pub min_theta: f64,
    pub invariants_pass: bool,
    /// `kinetic_window(k)` for every step.
    pub kinetic_window: Vec<f64>,
}

pub const STUDY_COLUMNS: [&str; 15] = [
    "level",
    "tau",
    "h",
    "eps",
    "steps",
    "max_abs_drift",
    "max_G",
    "V_final",
    "eps_monitor",
    "weighted_H1",
    "energy_budget",
    "weak_residual",
    "min_det",
    "min_theta",
    "invariants_pass",
];

impl StudyLevel {
    pub fn from_run(level: usize, traj: &Trajectory, audit: &AuditReport) -> Result<Self> {
        let c = &traj.config;
        let (psi, eta) = reference_test_functions(c.t_final);
        let weak = weak_heat_residual(traj, &psi, &eta)?;
        let m = &audit.monitors;
        Ok(Self {
            level,
            tau: c.tau,
            h: c.h,
            eps: c.eps,
            steps: traj.steps(),
            max_abs_drift: m.max_abs_drift,
            max_g: m.max_g,
            v_final: m.v_final,
            eps_monitor: m.eps_strain_rate,
            weighted_h1: m.weighted_h1,
            energy_budget: m.energy_budget,
            weak_residual: weak.total(),
            min_det: m.min_det,
            min_theta: m.min_theta,
            invariants_pass: audit.all_pass(),
            kinetic_window: audit.ledger.rows.iter().map(|r| r.kinetic_window).collect(),
        })
    }

    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:?}");
        vec![
            self.level.to_string(),
            f(self.tau),
            f(self.h),
            f(self.eps),
            self.steps.to_string(),
            f(self.max_abs_drift),
            f(self.max_g),
            f(self.v_final),
            f(self.eps_monitor),
            f(self.weighted_h1),
            f(self.energy_budget),
            f(self.weak_residual),
            f(self.min_det),
            f(self.min_theta),
            self.invariants_pass.to_string(),
        ]
    }
}

/// One refinement comparison; passes when `value <= limit`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCheck {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl StudyCheck {
    fn new(name: String, value: f64, limit: f64) -> Self {
        Self {
            pass: value <= limit,
            name,
            value,
            limit,
        }
    }
}

pub const STUDY_CHECK_COLUMNS: [&str; 4] = ["check", "value", "limit", "pass"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub mode: StudyMode,
    pub levels: Vec<StudyLevel>,
    pub checks: Vec<StudyCheck>,
}

impl StudyReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass) && self.levels.iter().all(|l| l.invariants_pass)
    }
}

/// Larger over smaller; 1 when both vanish.
pub fn spread(a: f64, b: f64) -> f64 {
    let (lo, hi) = if a.abs() <= b.abs() { (a.abs(), b.abs()) } else { (b.abs(), a.abs()) };
    if hi == 0.0 {
        1.0
    } else if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `|b| / |a|`; zero when both vanish.
pub fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        b.abs() / a.abs()
    }
}

/// Comparisons between consecutive levels.
pub fn study_checks(mode: StudyMode, levels: &[StudyLevel]) -> Vec<StudyCheck> {
    let mut out = Vec::new();
    for pair in levels.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let tag = format!("{}->{}", a.level, b.level);
        match mode {
            StudyMode::Tau => {
                out.push(StudyCheck::new(format!("drift_ratio {tag}"), ratio(a.max_abs_drift, b.max_abs_drift), 0.75));
                out.push(StudyCheck::new(format!("max_G_spread {tag}"), spread(a.max_g, b.max_g), 2.0));
                out.push(StudyCheck::new(format!("V_final_spread {tag}"), spread(a.v_final, b.v_final), 2.0));
                out.push(StudyCheck::new(format!("eps_monitor_spread {tag}"), spread(a.eps_monitor, b.eps_monitor), 2.0));
                out.push(StudyCheck::new(format!("weighted_H1_spread {tag}"), spread(a.weighted_h1, b.weighted_h1), 2.0));
            }
            StudyMode::Eps => {
                out.push(StudyCheck::new(
                    format!("weak_residual_ratio {tag}"),
                    ratio(a.weak_residual, b.weak_residual),
                    1.25,
                ));
            }
            StudyMode::H => {
                out.push(StudyCheck::new(format!("kinetic_window_rel_diff {tag}"), kinetic_mismatch(a, b), 0.1));
            }
        }
    }
    if mode == StudyMode::Eps && !levels.is_empty() {
        let bound = levels.iter().map(|l| l.energy_budget).fold(0.0, f64::max);
        let worst = levels.iter().map(|l| l.eps_monitor).fold(0.0, f64::max);
        out.push(StudyCheck::new("eps_monitor_bounded".into(), worst, bound));
    }
    out
}

/// Largest relative gap of `kinetic_window` at common times; the finer level
/// has twice as many steps.
fn kinetic_mismatch(coarse: &StudyLevel, fine: &StudyLevel) -> f64 {
    let r = (coarse.tau / fine.tau).round() as usize;
    let mut worst = 0.0f64;
    for (k, kc) in coarse.kinetic_window.iter().enumerate() {
        let Some(kf) = fine.kinetic_window.get(k * r) else {
            return f64::INFINITY;
        };
        let scale = kc.abs().max(kf.abs());
        if scale > 0.0 {
            worst = worst.max((kc - kf).abs() / scale);
        }
    }
    worst
}

/// Run and summarize one level.
pub fn run_level(base: &SchemeConfig, mode: StudyMode, j: usize) -> Result<StudyLevel> {
    let cfg = level_config(base, mode, j);
    let traj = run_trajectory(&cfg)?;
    let audit = audit_trajectory(&traj)?;
    StudyLevel::from_run(j, &traj, &audit)
}

/// Run the ladder; `parallel` runs the levels concurrently.
pub fn run_study(base: &SchemeConfig, mode: StudyMode, levels: usize, parallel: bool) -> Result<StudyReport> {
    if levels == 0 {
        return Err(Error::Config("a study needs at least one level".into()));
    }
    for j in 0..levels {
        level_config(base, mode, j).validate()?;
    }
    let results: Vec<StudyLevel> = if parallel {
        (0..levels)
            .into_par_iter()
            .map(|j| run_level(base, mode, j))
            .collect::<Result<_>>()?
    } else {
        (0..levels).map(|j| run_level(base, mode, j)).collect::<Result<_>>()?
    };
    let checks = study_checks(mode, &results);
    Ok(StudyReport {
        mode,
        levels: results,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladders() {
        let base = SchemeConfig::default();
        let c = level_config(&base, StudyMode::H, 1);
        assert_eq!(c.h, base.h / 2.0);
        assert_eq!(c.tau, c.h / 8.0);
        assert!(c.validate().is_ok());
        assert_eq!(level_config(&base, StudyMode::Eps, 2).eps, base.eps / 100.0);
        assert_eq!(level_config(&base, StudyMode::Tau, 3).tau, base.tau / 8.0);
        assert!("x".parse::<StudyMode>().is_err());
    }

    #[test]
    fn spread_and_ratio() {
        assert_eq!(spread(2.0, 1.0), 2.0);
        assert_eq!(spread(0.0, 0.0), 1.0);
        assert_eq!(ratio(4.0, 1.0), 0.25);
        assert_eq!(ratio(0.0, 0.0), 0.0);
    }
}
