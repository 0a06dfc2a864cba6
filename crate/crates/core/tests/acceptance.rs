//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::time::{Duration, Instant};

use thermovisco::audit::{audit_trajectory, reference_test_functions, weak_heat_residual, AuditReport};
use thermovisco::driver::{run_trajectory, ForceShape, SchemeConfig, Trajectory};
use thermovisco::mechanics::{solve_mech_step, MechanicalProblem, NewtonSettings};
use thermovisco::oracles::{self, OracleReport, DEFAULT_SEED, FD_SAMPLES};
use thermovisco::study::spread;
use thermovisco::{Grid2D, MaterialParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(cfg: &SchemeConfig) -> (Trajectory, AuditReport) {
    let traj = run_trajectory(cfg).unwrap_or_else(|e| panic!("run failed: {e}"));
    let audit = audit_trajectory(&traj).unwrap_or_else(|e| panic!("audit failed: {e}"));
    (traj, audit)
}

fn closed_system() -> SchemeConfig {
    let mut c = SchemeConfig::default();
    c.kappa = 0.0;
    c.forcing.shape = ForceShape::None;
    c.initial.v0_amplitude = [0.5, -0.3];
    c
}

fn halved(base: &SchemeConfig, j: i32, eps_too: bool) -> SchemeConfig {
    let mut c = base.clone();
    c.tau /= 2f64.powi(j);
    if eps_too {
        c.eps /= 2f64.powi(j);
    }
    c
}

fn failing(reports: &[OracleReport]) -> Vec<String> {
    reports
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("{} ({:e} > {:e})", r.name, r.max_error, r.tolerance))
        .collect()
}

fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn constitutive_suites() -> Outcome {
    let start = Instant::now();
    let m = MaterialParams::default();
    let mut reports = oracles::identity_suite(&m, DEFAULT_SEED);
    reports.extend(oracles::symmetry_suite(&m, DEFAULT_SEED));
    let elapsed = start.elapsed();
    let identities = ["xi_equals_2R", "viscous_stress_linearity"];
    let has_all = identities.iter().all(|n| reports.iter().any(|r| r.name == *n && r.samples >= 1000));
    let bad = failing(&reports);
    Outcome {
        pass: bad.is_empty() && has_all && elapsed < Duration::from_secs(5),
        detail: format!("{} checks, failing {:?}, {:.2?}", reports.len(), bad, elapsed),
    }
}

fn derivative_anchoring() -> Outcome {
    let start = Instant::now();
    let reports = oracles::fd_gradient_suite(&MaterialParams::default(), DEFAULT_SEED);
    let elapsed = start.elapsed();
    let bad = failing(&reports);
    let enough = reports.iter().all(|r| r.samples >= FD_SAMPLES);
    let max_rel = reports.iter().map(|r| r.max_error).fold(0.0, f64::max);
    Outcome {
        pass: bad.is_empty() && enough && elapsed < Duration::from_secs(30),
        detail: format!("{} derivatives, max rel err {max_rel:.2e}, failing {bad:?}, {elapsed:.2?}", reports.len()),
    }
}

fn step_optimality(reference: &AuditReport, elapsed: Duration) -> Outcome {
    let mech = reference.steps.iter().map(|s| s.mech_residual).fold(0.0, f64::max);
    let therm = reference.steps.iter().map(|s| s.thermal_residual).fold(0.0, f64::max);
    let comp_mech = reference
        .steps
        .iter()
        .map(|s| s.mech_competitor_gap / s.mech_competitor_scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let comp_therm = reference
        .steps
        .iter()
        .map(|s| s.thermal_gap_prev.max(s.thermal_gap_zero) / s.thermal_competitor_scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let m = &reference.monitors;
    let pass = mech <= 1e-8
        && therm <= 1e-8
        && comp_mech <= 1e-12
        && comp_therm <= 1e-12
        && m.min_theta >= -1e-10
        && m.min_det >= 0.2
        && elapsed < Duration::from_secs(600);
    Outcome {
        pass,
        detail: format!(
            "mech {mech:.2e}, thermal {therm:.2e}, competitor gaps {comp_mech:.2e}/{comp_therm:.2e}, min theta {:.4}, min det {:.4}, {elapsed:.2?} on one thread",
            m.min_theta, m.min_det
        ),
    }
}

fn exact_balances(reference: &AuditReport) -> Outcome {
    let internal = reference
        .steps
        .iter()
        .map(|s| s.internal_balance / (1e-8 * s.internal_scale))
        .fold(0.0, f64::max);
    let identity = reference
        .steps
        .iter()
        .map(|s| s.mech_identity / (1e-8 * s.mech_identity_scale))
        .fold(0.0, f64::max);
    Outcome {
        pass: internal <= 1.0 && identity <= 1.0 && !reference.steps.is_empty(),
        detail: format!("worst internal {internal:.2e}, worst mechanical identity {identity:.2e} (units of 1e-8 scale)"),
    }
}

fn conservation(closed: &[AuditReport], equilibrium: &AuditReport) -> Outcome {
    let drifts: Vec<f64> = closed.iter().map(|a| a.monitors.max_abs_drift).collect();
    let ratios: Vec<f64> = drifts.windows(2).map(|w| w[1] / w[0]).collect();
    let eq = equilibrium.monitors.max_abs_drift;
    Outcome {
        pass: ratios.len() == 3 && ratios.iter().all(|r| *r <= 0.75) && eq <= 1e-12,
        detail: format!("drifts {}, ratios {ratios:.3?}, equilibrium {eq:.1e}", sci(&drifts)),
    }
}

fn uniformity(ladder: &[AuditReport], eps_runs: &[AuditReport]) -> Outcome {
    let mut worst_spread = 0.0f64;
    for pair in ladder.windows(2) {
        let (a, b) = (&pair[0].monitors, &pair[1].monitors);
        worst_spread = worst_spread
            .max(spread(a.max_g, b.max_g))
            .max(spread(a.v_final, b.v_final))
            .max(spread(a.eps_strain_rate, b.eps_strain_rate));
    }
    let bound = eps_runs.iter().map(|a| a.monitors.energy_budget).fold(0.0, f64::max);
    let monitors: Vec<f64> = eps_runs.iter().map(|a| a.monitors.eps_strain_rate).collect();
    let bounded = monitors.iter().all(|m| m.is_finite() && *m <= bound);
    Outcome {
        pass: worst_spread <= 2.0 && bounded,
        detail: format!("worst spread over tau halvings {worst_spread:.3}, eps monitors {} <= {bound:.3}", sci(&monitors)),
    }
}

fn brute_force() -> Outcome {
    let start = Instant::now();
    let grid = Grid2D::new(3).expect("grid");
    let mat = MaterialParams::default();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut failures = 0;
    for i in 0..20 {
        let mut rng = oracles::sample_rng(DEFAULT_SEED, "step inputs", i);
        let input = oracles::random_mech_input(&grid, &mut rng, 0.1);
        let solved = solve_mech_step(&grid, &mat, &input, None, &NewtonSettings::default())
            .and_then(|(y, _)| MechanicalProblem::new(&grid, &mat, &input)?.energy(&y));
        let oracle = oracles::multistart_min_oracle(&grid, &mat, &input, 10_000, DEFAULT_SEED + i as u64);
        match (solved, oracle) {
            (Ok(e), Ok(o)) => worst_gap = worst_gap.max(e - o.best_energy),
            _ => failures += 1,
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: failures == 0 && worst_gap <= 1e-8 && elapsed < Duration::from_secs(120),
        detail: format!("20 inputs x 1e4 starts, worst solver - oracle {worst_gap:.2e}, failures {failures}, {elapsed:.2?}"),
    }
}

fn regularity(ladder: &[AuditReport]) -> Outcome {
    let values: Vec<f64> = ladder.iter().map(|a| a.monitors.weighted_h1).collect();
    let worst = values.windows(2).map(|w| spread(w[0], w[1])).fold(0.0, f64::max);
    Outcome {
        pass: values.iter().all(|v| v.is_finite()) && worst <= 2.0,
        detail: format!("weighted H1 {values:.4?}, worst spread {worst:.3}"),
    }
}

fn weak_residual_trend(equilibrium: &Trajectory, joint: &[Trajectory]) -> Outcome {
    let r = |t: &Trajectory| {
        let (psi, eta) = reference_test_functions(t.config.t_final);
        weak_heat_residual(t, &psi, &eta).expect("weak residual").total()
    };
    let eq = r(equilibrium).abs();
    let values: Vec<f64> = joint.iter().map(r).collect();
    let ratios: Vec<f64> = values.windows(2).map(|w| w[1].abs() / w[0].abs()).collect();
    Outcome {
        pass: eq <= 1e-10 && ratios.iter().all(|q| *q <= 1.25),
        detail: format!("equilibrium {eq:.1e}, residuals {}, ratios {ratios:.3?}", sci(&values)),
    }
}

fn main() {
    let total = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();

    results.push((1, "constitutive identities and frame indifference", constitutive_suites()));
    results.push((2, "derivative anchoring", derivative_anchoring()));

    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let start = Instant::now();
    let (_, reference) = pool.install(|| run(&SchemeConfig::default()));
    let ref_elapsed = start.elapsed();
    results.push((3, "step optimality on the reference run", step_optimality(&reference, ref_elapsed)));
    results.push((4, "exact discrete balances", exact_balances(&reference)));

    let closed: Vec<AuditReport> = (0..4).map(|j| run(&halved(&closed_system(), j, false)).1).collect();
    let (eq_traj, eq_audit) = run(&SchemeConfig::equilibrium());
    results.push((5, "conservation under refinement", conservation(&closed, &eq_audit)));

    let mut ladder = vec![reference];
    ladder.extend((1..4).map(|j| run(&halved(&SchemeConfig::default(), j, false)).1));
    let eps_runs: Vec<AuditReport> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|e| {
            let mut c = SchemeConfig::default();
            c.eps = *e;
            run(&c).1
        })
        .collect();
    results.push((6, "a priori uniformity", uniformity(&ladder, &eps_runs)));
    results.push((7, "brute-force oracle agreement", brute_force()));
    results.push((8, "regularity monitor", regularity(&ladder)));

    let joint: Vec<Trajectory> = (0..4).map(|j| run(&halved(&SchemeConfig::default(), j, true)).0).collect();
    results.push((9, "weak heat residual trend", weak_residual_trend(&eq_traj, &joint)));

    let mut all = true;
    for (id, name, o) in &results {
        all &= o.pass;
        println!("criterion {id} {}: {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance {} in {:.2?}", if all { "PASS" } else { "FAIL" }, total.elapsed());
    if !all {
        std::process::exit(1);
    }
}
