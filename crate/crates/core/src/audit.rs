//! Energy bookkeeping, discrete balance checks and regularity monitors
//! evaluated over a finished trajectory.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::Trajectory;
use crate::error::Result;
use crate::grid::{self, Grid2D, ScalarField, VectorField};
use crate::material::{contract, MaterialParams};
use crate::mechanics::{self, MechanicalProblem};
use crate::thermal::{self, ThermalProblem};

/// Column order of the ledger CSV.
pub const LEDGER_COLUMNS: [&str; 21] = [
    "step",
    "t",
    "M",
    "Wcpl",
    "Win_total",
    "E_total",
    "kinetic_window",
    "diss_step",
    "diss_cum",
    "flux_cum",
    "work_cum",
    "res_internal",
    "res_mech_identity",
    "drift_total",
    "V_k",
    "G_k",
    "min_theta",
    "min_det",
    "monitor_weighted_H1",
    "monitor_eps_strainrate",
    "delay_diss_cum",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub step: usize,
    pub t: f64,
    pub m: f64,
    pub wcpl: f64,
    pub win_total: f64,
    pub e_total: f64,
    pub kinetic_window: f64,
    pub diss_step: f64,
    pub diss_cum: f64,
    /// Heat inflow through the boundary, `τ κ Σ ∮ (θ_b - θ)`.
    pub flux_cum: f64,
    pub work_cum: f64,
    pub res_internal: f64,
    pub res_mech_identity: f64,
    pub drift_total: f64,
    pub v_k: f64,
    pub g_k: f64,
    pub min_theta: f64,
    pub min_det: f64,
    pub monitor_weighted_h1: f64,
    pub monitor_eps_strainrate: f64,
    /// Cumulative dissipation of the time-delayed inertia, `Σ ρτ/(2h) ‖δy_l - δy_(l-h/τ)‖²`.
    pub delay_diss_cum: f64,
}

impl LedgerRow {
    pub fn values(&self) -> [f64; 21] {
        [
            self.step as f64,
            self.t,
            self.m,
            self.wcpl,
            self.win_total,
            self.e_total,
            self.kinetic_window,
            self.diss_step,
            self.diss_cum,
            self.flux_cum,
            self.work_cum,
            self.res_internal,
            self.res_mech_identity,
            self.drift_total,
            self.v_k,
            self.g_k,
            self.min_theta,
            self.min_det,
            self.monitor_weighted_h1,
            self.monitor_eps_strainrate,
            self.delay_diss_cum,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
}

/// Per-step certificates; entry `k - 1` belongs to step `k`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepAudit {
    pub step: usize,
    pub mech_residual: f64,
    pub thermal_residual: f64,
    /// `J(y^k) - J(y^(k-1))`, nonpositive for a valid step.
    pub mech_competitor_gap: f64,
    pub mech_competitor_scale: f64,
    /// `Φ(θ^k) - Φ(θ^(k-1))` and `Φ(θ^k) - Φ(0)`.
    pub thermal_gap_prev: f64,
    pub thermal_gap_zero: f64,
    pub thermal_competitor_scale: f64,
    pub internal_balance: f64,
    pub internal_scale: f64,
    pub mech_identity: f64,
    pub mech_identity_scale: f64,
    /// Smallest nodal value of `H(Δy^(k-1)) - H(Δy^k) - DH(Δy^k)·(Δy^(k-1) - Δy^k)`.
    pub h_convexity_min: f64,
    /// Smallest `C` with `W(k-1) >= W(k) + <∂W(k), diff> - C ‖diff‖²` for the elastic sum.
    pub lambda_constant: f64,
    /// `|diss_step - 2τR_ε|`.
    pub diss_identity_error: f64,
    pub diss_step: f64,
    pub eps_term: f64,
    pub coupling_work: f64,
    pub force_work: f64,
    pub flux: f64,
    pub delay_diss: f64,
    pub min_det: f64,
    pub min_theta: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AprioriMonitors {
    pub max_g: f64,
    pub v_final: f64,
    /// `ε Σ τ ‖δ∇Δy‖²`.
    pub eps_strain_rate: f64,
    pub sup_m: f64,
    pub min_det: f64,
    pub min_theta: f64,
    /// `Σ τ ‖(1 + |Δy|)^((p-2)/2) ∇Δy‖²`.
    pub weighted_h1: f64,
    pub max_abs_drift: f64,
    /// Max over `k` of the slack in the mechanical energy inequality and its ratio to `V_k`.
    pub max_slack: f64,
    pub max_slack_over_v: f64,
    /// `M(0) + kinetic(0) + Σ |coupling work| + Σ |force work|`.
    pub energy_budget: f64,
    /// Smallest Λ-convexity constant that covers every step.
    pub lambda_constant: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub ledger: EnergyLedger,
    pub steps: Vec<StepAudit>,
    pub monitors: AprioriMonitors,
}

/// Result of the hard per-step checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub worst: f64,
    pub pass: bool,
}

impl AuditReport {
    /// Hard invariants of a converged run.
    pub fn invariants(&self) -> Vec<InvariantCheck> {
        let fold = |f: &dyn Fn(&StepAudit) -> f64| self.steps.iter().map(f).fold(0.0, f64::max);
        let mut out = vec![
            ("mechanical EL residual", fold(&|s| s.mech_residual / 1e-8)),
            ("thermal EL residual", fold(&|s| s.thermal_residual / 1e-8)),
            (
                "mechanical competitor",
                fold(&|s| s.mech_competitor_gap / (1e-12 * s.mech_competitor_scale)),
            ),
            (
                "thermal competitor",
                fold(&|s| s.thermal_gap_prev.max(s.thermal_gap_zero) / (1e-12 * s.thermal_competitor_scale)),
            ),
            ("internal energy balance", fold(&|s| s.internal_balance / (1e-8 * s.internal_scale))),
            ("mechanical test identity", fold(&|s| s.mech_identity / (1e-8 * s.mech_identity_scale))),
            ("H convexity", fold(&|s| -s.h_convexity_min / 1e-10)),
            ("dissipation identity", fold(&|s| s.diss_identity_error / (1e-12 * (1.0 + s.diss_step)))),
        ]
        .into_iter()
        .map(|(name, worst)| InvariantCheck {
            name: name.into(),
            worst,
            pass: worst <= 1.0,
        })
        .collect::<Vec<_>>();
        let m = &self.monitors;
        out.push(InvariantCheck {
            name: "nonnegative temperature".into(),
            worst: -m.min_theta / 1e-10,
            pass: m.min_theta >= -1e-10,
        });
        out.push(InvariantCheck {
            name: "positive determinant".into(),
            worst: m.min_det,
            pass: m.min_det > 0.0,
        });
        let diss_ok = self.steps.iter().all(|s| s.diss_step >= 0.0);
        out.push(InvariantCheck {
            name: "nonnegative dissipation".into(),
            worst: self.steps.iter().map(|s| s.diss_step).fold(0.0, f64::min),
            pass: diss_ok,
        });
        out
    }

    pub fn all_pass(&self) -> bool {
        self.invariants().iter().all(|c| c.pass)
    }
}

/// Coupling energy on cells with cell-mean temperatures.
pub fn coupling_energy_total(grid: &Grid2D, mat: &MaterialParams, y: &VectorField, theta: &ScalarField) -> Result<f64> {
    let f = grid::grad_cells(grid, y)?;
    let th = theta.cell_means(grid);
    let mut s = 0.0;
    for (f, t) in f.iter().zip(&th) {
        s += mat.coupling_energy(f, *t)?;
    }
    Ok(s * grid.cell_weight())
}

fn boundary_excess(grid: &Grid2D, theta: &ScalarField, theta_b: &ScalarField) -> f64 {
    grid.boundary()
        .iter()
        .zip(grid.boundary_weights())
        .map(|(&b, w)| w * (theta.0[b] - theta_b.0[b]))
        .sum()
}

fn weighted_h1_density(grid: &Grid2D, mat: &MaterialParams, y: &VectorField) -> Result<f64> {
    let lap = grid::laplacian_nodes(grid, y)?;
    let third = grid::edge_differences(grid, &lap);
    let expo = 0.5 * (mat.p - 2.0);
    let mut s = 0.0;
    for (e, t) in grid.edges().iter().zip(&third) {
        let a = 0.5 * (lap[e.from].norm() + lap[e.to].norm());
        s += (1.0 + a).powf(2.0 * expo) * t.norm_squared();
    }
    Ok(s * grid.patch_weight())
}

/// Audit step `k >= 1`.
pub fn audit_step(traj: &Trajectory, k: usize) -> Result<StepAudit> {
    let g = &traj.grid;
    let c = &traj.config;
    let mat = &c.material;
    let tau = c.tau;
    let y_new = &traj.y[k];
    let y_old = &traj.y[k - 1];

    // Mechanical step.
    let mi = traj.mech_input(k);
    let mp = MechanicalProblem::new(g, mat, &mi)?;
    let u = traj.increment(k);
    let (_, asm_new) = mp.assemble_increment(&u, true, false)?;
    let j_new = asm_new.terms.total();
    let j_old = mp.energy(y_old)?;
    let mech_residual = asm_new.gradient.norm() / (1.0 + j_new.abs());
    let dz = &u / tau;
    let mech_identity = asm_new.gradient.dot(&dz).abs();
    let mech_identity_scale = (1.0 + j_new.abs()) * dz.norm();

    // Thermal step.
    let ti = traj.thermal_input(k)?;
    let tp = ThermalProblem::new(g, mat, &ti)?;
    let theta = &traj.theta[k];
    let tres = tp.residual(theta)?;
    let phi = tp.functional(theta)?;
    let phi_prev = tp.functional(&traj.theta[k - 1])?;
    let phi_zero = tp.functional(&ScalarField::constant(g, 0.0))?;
    let internal_balance = (tau * tres.row_sum).abs();
    let w_abs: f64 = grid::integrate_nodes(g, &traj.w[k].0.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let internal_scale = 1.0 + w_abs + tau * tres.sources.abs();

    // Dissipation and its identity with 2τR_ε.
    let fo = grid::grad_cells(g, y_old)?;
    let fn_ = grid::grad_cells(g, y_new)?;
    let th_old = traj.theta[k - 1].cell_means(g);
    let wc = g.cell_weight();
    let mut xi = 0.0;
    let mut r = 0.0;
    let mut cpl = 0.0;
    for cidx in 0..fo.len() {
        let fdot = (fn_[cidx] - fo[cidx]) / tau;
        xi += wc * mat.dissipation_rate(&fo[cidx], &fdot, th_old[cidx]);
        r += wc * mat.dissipation_potential(&fo[cidx], &fdot, th_old[cidx]);
        cpl += wc * contract(&mat.coupling_stress(&fo[cidx], th_old[cidx])?, &fdot);
    }
    let rates = thermal::third_gradient_rates(g, y_new, y_old, tau)?;
    let eps_l2: f64 = rates.iter().map(|d| d.norm_squared()).sum::<f64>() * g.patch_weight();
    let eps_term = tau * c.eps * eps_l2;
    let diss_step = tau * xi + eps_term;
    let two_tau_r = 2.0 * tau * (r + 0.5 * c.eps * eps_l2);

    // Convexity monitors.
    let lap_new = grid::laplacian_nodes(g, y_new)?;
    let lap_old = grid::laplacian_nodes(g, y_old)?;
    let h_convexity_min = lap_new
        .iter()
        .zip(&lap_old)
        .map(|(b, a)| mat.strain_gradient_energy(a) - mat.strain_gradient_energy(b) - mat.strain_gradient_force(b).dot(&(a - b)))
        .fold(f64::INFINITY, f64::min);
    let mut w_new = 0.0;
    let mut w_old = 0.0;
    let mut lin = 0.0;
    let mut diff2 = 0.0;
    for cidx in 0..fo.len() {
        let d = fo[cidx] - fn_[cidx];
        w_new += wc * mat.elastic_energy(&fn_[cidx])?;
        w_old += wc * mat.elastic_energy(&fo[cidx])?;
        lin += wc * contract(&mat.elastic_stress(&fn_[cidx])?, &d);
        diff2 += wc * d.norm_squared();
    }
    let lambda_constant = if diff2 > 0.0 {
        ((w_new + lin - w_old) / diff2).max(0.0)
    } else {
        0.0
    };

    // Work, flux and delay dissipation.
    let v = traj.velocity(k as i64);
    let vd = traj.velocity(k as i64 - c.delay_steps() as i64);
    let force_work = tau * mi.f_avg.l2_dot(&v, g);
    let flux = -tau * c.kappa * boundary_excess(g, theta, &ti.theta_b_avg);
    let delay_diss = c.rho * tau / (2.0 * c.h) * v.axpy(-1.0, &vd).l2_norm_squared(g);

    Ok(StepAudit {
        step: k,
        mech_residual,
        thermal_residual: tres.scaled,
        mech_competitor_gap: j_new - j_old,
        mech_competitor_scale: 1.0 + j_old.abs(),
        thermal_gap_prev: phi - phi_prev,
        thermal_gap_zero: phi - phi_zero,
        thermal_competitor_scale: 1.0 + phi_prev.abs().max(phi_zero.abs()),
        internal_balance,
        internal_scale,
        mech_identity,
        mech_identity_scale,
        h_convexity_min,
        lambda_constant,
        diss_identity_error: (diss_step - two_tau_r).abs(),
        diss_step,
        eps_term,
        coupling_work: tau * cpl,
        force_work,
        flux,
        delay_diss,
        min_det: grid::min_det(g, y_new)?,
        min_theta: theta.min(),
    })
}

/// `(ρ/2)(τ/h) Σ_{l = k-h/τ+1}^{k} ‖δy^(l)‖²`.
pub fn kinetic_window(traj: &Trajectory, k: usize) -> f64 {
    let c = &traj.config;
    let d = c.delay_steps() as i64;
    let s: f64 = ((k as i64 - d + 1)..=(k as i64))
        .map(|l| traj.velocity(l).l2_norm_squared(&traj.grid))
        .sum();
    0.5 * c.rho * c.tau / c.h * s
}

struct StateEnergies {
    m: f64,
    wcpl: f64,
    win: f64,
    kin: f64,
    load: f64,
    weighted_h1: f64,
    min_det: f64,
}

fn state_energies(traj: &Trajectory, k: usize) -> Result<StateEnergies> {
    let g = &traj.grid;
    let c = &traj.config;
    let y = &traj.y[k];
    let f_point = c.forcing.force_at(g, k as f64 * c.tau);
    Ok(StateEnergies {
        m: mechanics::mechanical_energy(g, &c.material, y)?,
        wcpl: coupling_energy_total(g, &c.material, y, &traj.theta[k])?,
        win: grid::integrate_nodes(g, &traj.w[k].0),
        kin: kinetic_window(traj, k),
        load: f_point.l2_dot(y, g),
        weighted_h1: weighted_h1_density(g, &c.material, y)?,
        min_det: grid::min_det(g, y)?,
    })
}

/// Full audit: ledger rows for `k = 0..=K`, per-step certificates and monitors.
pub fn audit_trajectory(traj: &Trajectory) -> Result<AuditReport> {
    let kmax = traj.steps();
    let c = &traj.config;
    let steps: Vec<StepAudit> = (1..=kmax)
        .into_par_iter()
        .map(|k| audit_step(traj, k))
        .collect::<Result<_>>()?;
    let states: Vec<StateEnergies> = (0..=kmax)
        .into_par_iter()
        .map(|k| state_energies(traj, k))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(kmax + 1);
    let s0 = &states[0];
    let base = s0.m + s0.win + s0.kin;
    let mut acc = LedgerRow::default();
    let mut monitors = AprioriMonitors {
        min_det: f64::INFINITY,
        min_theta: f64::INFINITY,
        energy_budget: s0.m + s0.kin,
        ..Default::default()
    };
    let mut cpl_cum = 0.0;
    for (k, s) in states.iter().enumerate() {
        let mut row = LedgerRow {
            step: k,
            t: k as f64 * c.tau,
            m: s.m,
            wcpl: s.wcpl,
            win_total: s.win,
            e_total: s.m + s.win,
            kinetic_window: s.kin,
            min_det: s.min_det,
            min_theta: traj.theta[k].min(),
            ..Default::default()
        };
        if k >= 1 {
            let st = &steps[k - 1];
            acc.diss_cum += st.diss_step;
            acc.flux_cum += st.flux;
            acc.work_cum += st.force_work;
            acc.delay_diss_cum += st.delay_diss;
            acc.v_k += c.tau * grid::grad_cells(&traj.grid, &traj.velocity(k as i64))?
                .iter()
                .map(Matrix2::norm_squared)
                .sum::<f64>()
                * traj.grid.cell_weight();
            acc.monitor_eps_strainrate += st.eps_term;
            acc.monitor_weighted_h1 += c.tau * s.weighted_h1;
            cpl_cum += st.coupling_work;
            row.diss_step = st.diss_step;
            row.res_internal = st.internal_balance;
            row.res_mech_identity = st.mech_identity;
            monitors.energy_budget += st.coupling_work.abs() + st.force_work.abs();
            monitors.lambda_constant = monitors.lambda_constant.max(st.lambda_constant);
        }
        row.diss_cum = acc.diss_cum;
        row.flux_cum = acc.flux_cum;
        row.work_cum = acc.work_cum;
        row.delay_diss_cum = acc.delay_diss_cum;
        row.v_k = acc.v_k;
        row.monitor_eps_strainrate = acc.monitor_eps_strainrate;
        row.monitor_weighted_h1 = acc.monitor_weighted_h1;
        row.drift_total = row.e_total + row.kinetic_window - base - row.flux_cum - row.work_cum + row.delay_diss_cum;
        row.g_k = row.e_total - s.load + row.kinetic_window;

        let slack = s.m + s.kin + acc.diss_cum - s0.m - s0.kin + cpl_cum - acc.work_cum;
        monitors.max_slack = monitors.max_slack.max(slack);
        if acc.v_k > 0.0 {
            monitors.max_slack_over_v = monitors.max_slack_over_v.max(slack / acc.v_k);
        }
        monitors.max_g = monitors.max_g.max(row.g_k);
        monitors.sup_m = monitors.sup_m.max(row.m);
        monitors.min_det = monitors.min_det.min(row.min_det);
        monitors.min_theta = monitors.min_theta.min(row.min_theta);
        monitors.max_abs_drift = monitors.max_abs_drift.max(row.drift_total.abs());
        rows.push(row);
    }
    if let Some(last) = rows.last() {
        monitors.v_final = last.v_k;
        monitors.eps_strain_rate = last.monitor_eps_strainrate;
        monitors.weighted_h1 = last.monitor_weighted_h1;
    }
    if rows.len() == 1 {
        monitors.max_g = rows[0].g_k;
    }
    Ok(AuditReport {
        ledger: EnergyLedger { rows },
        steps,
        monitors,
    })
}

/// Energy-balance residual of the thermal step tested with `φ ≡ 1`, scaled by τ.
pub fn step_internal_balance(traj: &Trajectory, k: usize) -> Result<f64> {
    Ok(audit_step(traj, k)?.internal_balance)
}

/// `|<EL(y^k), δ_τ y^k>|` over the interior unknowns.
pub fn step_mechanical_identity(traj: &Trajectory, k: usize) -> Result<f64> {
    Ok(audit_step(traj, k)?.mech_identity)
}

/// `D(k)` for `k = 0..=K`.
pub fn total_balance_drift(traj: &Trajectory) -> Result<Vec<f64>> {
    Ok(audit_trajectory(traj)?.ledger.rows.iter().map(|r| r.drift_total).collect())
}

pub fn apriori_monitors(traj: &Trajectory) -> Result<AprioriMonitors> {
    Ok(audit_trajectory(traj)?.monitors)
}

/// Pieces of the discrete weak heat residual.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeakHeatResidual {
    pub conduction: f64,
    pub robin: f64,
    pub load: f64,
    pub energy: f64,
    pub stress: f64,
    pub dh_laplacian: f64,
    pub dh_gradient: f64,
}

impl WeakHeatResidual {
    pub fn total(&self) -> f64 {
        self.conduction + self.robin + self.load + self.energy + self.stress + self.dh_laplacian + self.dh_gradient
    }
}

/// Spatial density of `∫ ψ (W_el + H + w + ρ/2 |v|²)` at state `k` with velocity `v`.
fn weighted_total_energy(traj: &Trajectory, k: usize, v: &VectorField, psi: &ScalarField) -> Result<f64> {
    let g = &traj.grid;
    let c = &traj.config;
    let mat = &c.material;
    let y = &traj.y[k];
    let psi_c = psi.cell_means(g);
    let mut s = 0.0;
    for (f, p) in grid::grad_cells(g, y)?.iter().zip(&psi_c) {
        s += g.cell_weight() * p * mat.elastic_energy(f)?;
    }
    for (slot, lap) in grid::laplacian_nodes(g, y)?.iter().enumerate() {
        s += g.patch_weight() * psi.0[g.interior()[slot]] * mat.strain_gradient_energy(lap);
    }
    let w = g.node_weights();
    for n in 0..g.num_nodes() {
        s += w[n] * psi.0[n] * (traj.w[k].0[n] + 0.5 * c.rho * v.0[n].norm_squared());
    }
    Ok(s)
}

/// Discrete residual of the ε-free weak heat equation for `φ = ψ(x) η(t)`,
/// `η(T) = 0`. Time integrals use the step-wise constant states of each
/// interval with the interval mean of `η`; the `∂_t φ` term is summed by parts.
pub fn weak_heat_residual(
    traj: &Trajectory,
    psi: &(dyn Fn(f64, f64) -> f64 + Sync),
    eta: &(dyn Fn(f64) -> f64 + Sync),
) -> Result<WeakHeatResidual> {
    let g = &traj.grid;
    let c = &traj.config;
    let mat = &c.material;
    let tau = c.tau;
    let kmax = traj.steps();
    let psi_f = ScalarField::from_fn(g, psi);
    let psi_grad = grid::grad_cells_scalar(g, &psi_f)?;
    let psi_lap = grid::laplacian_nodes_scalar(g, &psi_f)?;
    let node_w = g.node_weights();
    let dx = g.dx();
    let n = g.n();

    let per_step: Vec<WeakHeatResidual> = (1..=kmax)
        .into_par_iter()
        .map(|k| -> Result<WeakHeatResidual> {
            let a = (k as f64 - 1.0) * tau;
            let eta_bar = crate::driver::gauss_average(a, a + tau, eta);
            let ti = traj.thermal_input(k)?;
            let tp = ThermalProblem::new(g, mat, &ti)?;
            let theta = &traj.theta[k];
            let th = nalgebra::DVector::from_column_slice(&theta.0);
            let ps = nalgebra::DVector::from_column_slice(&psi_f.0);
            let conduction = ps.dot(&(tp.stiffness() * th));
            let robin: f64 = g
                .boundary()
                .iter()
                .zip(g.boundary_weights())
                .map(|(&b, w)| c.kappa * w * (theta.0[b] - ti.theta_b_avg.0[b]) * psi_f.0[b])
                .sum();
            let v = traj.velocity(k as i64);
            let f_avg = traj.f_avg(k);
            let load: f64 = -(0..g.num_nodes()).map(|i| node_w[i] * psi_f.0[i] * f_avg.0[i].dot(&v.0[i])).sum::<f64>();

            let fo = grid::grad_cells(g, &traj.y[k - 1])?;
            let fnew = grid::grad_cells(g, &traj.y[k])?;
            let th_old = traj.theta[k - 1].cell_means(g);
            let mut stress_term = 0.0;
            for cidx in 0..fo.len() {
                let fdot = (fnew[cidx] - fo[cidx]) / tau;
                let sigma = mat.elastic_stress(&fnew[cidx])?
                    + mat.coupling_stress(&fnew[cidx], th_old[cidx])?
                    + mat.viscous_stress(&fo[cidx], &fdot, th_old[cidx]);
                let vc = g.cell_nodes(cidx).iter().fold(Vector2::zeros(), |acc, &a| acc + v.0[a]) * 0.25;
                stress_term += g.cell_weight() * vc.dot(&(sigma * psi_grad[cidx]));
            }

            // DH(Δy) at nodes, zero on the boundary.
            let lap = grid::laplacian_nodes(g, &traj.y[k])?;
            let mut dh = vec![Vector2::zeros(); g.num_nodes()];
            for (slot, l) in lap.iter().enumerate() {
                dh[g.interior()[slot]] = mat.strain_gradient_force(l);
            }
            let mut dh_laplacian = 0.0;
            for (slot, &idx) in g.interior().iter().enumerate() {
                dh_laplacian -= g.patch_weight() * dh[idx].dot(&v.0[idx]) * psi_lap[slot];
            }
            let mut dh_gradient = 0.0;
            for j in 0..n {
                for i in 0..n {
                    let a = g.node(i, j);
                    for (di, dj) in [(1usize, 0usize), (0, 1)] {
                        if i + di >= n || j + dj >= n {
                            continue;
                        }
                        let b = g.node(i + di, j + dj);
                        let ddh = (dh[b] - dh[a]) / dx;
                        let vm = (v.0[a] + v.0[b]) * 0.5;
                        let dpsi = (psi_f.0[b] - psi_f.0[a]) / dx;
                        dh_gradient -= 2.0 * dx * dx * ddh.dot(&vm) * dpsi;
                    }
                }
            }
            Ok(WeakHeatResidual {
                conduction: tau * eta_bar * conduction,
                robin: tau * eta_bar * robin,
                load: tau * eta_bar * load,
                energy: 0.0,
                stress: tau * eta_bar * stress_term,
                dh_laplacian: tau * eta_bar * dh_laplacian,
                dh_gradient: tau * eta_bar * dh_gradient,
            })
        })
        .collect::<Result<_>>()?;

    let energies: Vec<f64> = (0..=kmax)
        .into_par_iter()
        .map(|k| weighted_total_energy(traj, k, &traj.velocity(k as i64), &psi_f))
        .collect::<Result<_>>()?;
    let mut out = WeakHeatResidual::default();
    for s in &per_step {
        out.conduction += s.conduction;
        out.robin += s.robin;
        out.load += s.load;
        out.stress += s.stress;
        out.dh_laplacian += s.dh_laplacian;
        out.dh_gradient += s.dh_gradient;
    }
    for l in 0..kmax {
        out.energy += eta(l as f64 * tau) * (energies[l + 1] - energies[l]);
    }
    Ok(out)
}

/// The fixed test pair used by the refinement checks: an interior bubble in
/// space and a linear decay to zero at the final time.
pub fn reference_test_functions(t_final: f64) -> (impl Fn(f64, f64) -> f64 + Sync, impl Fn(f64) -> f64 + Sync) {
    use std::f64::consts::PI;
    (
        |x: f64, y: f64| (PI * x).sin() * (PI * y).sin(),
        move |t: f64| 1.0 - t / t_final,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::{run_trajectory, SchemeConfig};

    fn short(mut c: SchemeConfig) -> SchemeConfig {
        c.t_final = 0.05;
        c.n = 8;
        c
    }

    #[test]
    fn equilibrium_ledger_is_flat() {
        let traj = run_trajectory(&short(SchemeConfig::equilibrium())).unwrap();
        let rep = audit_trajectory(&traj).unwrap();
        for r in &rep.ledger.rows {
            assert!(r.drift_total.abs() <= 1e-12);
            assert_eq!(r.kinetic_window, 0.0);
            assert_eq!(r.v_k, 0.0);
            assert!(r.res_internal <= 1e-12 && r.res_mech_identity <= 1e-12);
            assert_eq!(r.e_total, r.m + r.win_total);
        }
        assert!(rep.all_pass(), "{:?}", rep.invariants());
        let (psi, eta) = reference_test_functions(traj.config.t_final);
        let w = weak_heat_residual(&traj, &psi, &eta).unwrap();
        assert!(w.total().abs() <= 1e-10, "{w:?}");
    }

    #[test]
    fn loaded_run_passes_invariants() {
        let traj = run_trajectory(&short(SchemeConfig::default())).unwrap();
        let rep = audit_trajectory(&traj).unwrap();
        assert!(rep.all_pass(), "{:?}", rep.invariants());
        let mut prev = 0.0;
        for r in &rep.ledger.rows {
            assert!(r.v_k >= prev);
            prev = r.v_k;
            assert!((r.g_k - (r.e_total + r.kinetic_window - traj.config.forcing.force_at(&traj.grid, r.t).l2_dot(&traj.y[r.step], &traj.grid))).abs() < 1e-12);
        }
        assert!(rep.monitors.max_abs_drift.is_finite());
    }
}
