//! The mechanical half-step: minimization of the incremental functional
//!
//! ```text
//! J(y) = M(y) + W_cpl(y, θ_prev) + τ⁻¹ R(y_prev, y - y_prev, θ_prev)
//!        + ε/(2τ) ‖∇Δy - ∇Δy_prev‖² - (f_avg, y) + ρτ/(2h) ‖(y - y_prev)/τ - v_delay‖²
//! ```
//!
//! over deformations that agree with the identity on the boundary. The
//! gradient is the exact derivative of the assembled sum, so a vanishing
//! gradient is the discrete Euler–Lagrange system.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::grid::{self, Grid2D, ScalarField, VectorField};
use crate::material::{flatten, MaterialParams};

/// Data frozen during one mechanical step.
#[derive(Clone, Debug)]
pub struct MechStepInput {
    pub y_prev: VectorField,
    pub theta_prev: ScalarField,
    /// Discrete velocity one delay `h` back, `δ_τ y^(k - h/τ)`.
    pub delayed_velocity: VectorField,
    /// Interval average of the dead force.
    pub f_avg: VectorField,
    pub tau: f64,
    pub h: f64,
    pub eps: f64,
    pub rho: f64,
}

impl MechStepInput {
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        self.y_prev.check(grid)?;
        self.theta_prev.check(grid)?;
        self.delayed_velocity.check(grid)?;
        self.f_avg.check(grid)?;
        if !(self.tau > 0.0 && self.tau < self.h) {
            return Err(Error::InvalidParameter(format!(
                "time step tau = {} must lie in (0, h = {})",
                self.tau, self.h
            )));
        }
        if !(self.eps >= 0.0) || !(self.rho > 0.0) {
            return Err(Error::InvalidParameter("eps >= 0 and rho > 0 required".into()));
        }
        let det = grid::min_det(grid, &self.y_prev)?;
        if !(det > 0.0) {
            return Err(Error::NonPositiveDeterminant { det });
        }
        if let Some(t) = self.theta_prev.0.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::NegativeTemperature(*t));
        }
        Ok(())
    }
}

/// Individual contributions to the step functional.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MechEnergyTerms {
    pub elastic: f64,
    pub strain_gradient: f64,
    pub coupling: f64,
    pub dissipation: f64,
    pub regularization: f64,
    pub load: f64,
    pub inertia: f64,
}

impl MechEnergyTerms {
    pub fn total(&self) -> f64 {
        self.elastic
            + self.strain_gradient
            + self.coupling
            + self.dissipation
            + self.regularization
            + self.load
            + self.inertia
    }
}

/// Convergence data of one solve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final scaled residual.
    pub residual: f64,
    /// Smallest cell determinant over all accepted iterates.
    pub min_det: f64,
    pub backtracks: usize,
    /// Functional value at every accepted iterate, starting with the initial guess.
    pub energy_history: Vec<f64>,
    /// Interior dofs of the returned increment `y - y_prev` before rounding into `y`.
    pub increment: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_backtracks: usize,
    pub armijo: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            max_backtracks: 60,
            armijo: 1e-4,
        }
    }
}

/// The step functional together with the quantities frozen at `y_prev`.
pub struct MechanicalProblem<'a> {
    pub grid: &'a Grid2D,
    pub material: &'a MaterialParams,
    pub input: &'a MechStepInput,
    f_prev: Vec<Matrix2<f64>>,
    theta_cells: Vec<f64>,
    node_weights: Vec<f64>,
    /// Per edge: `(node, coefficient)` pairs of `∂(∇Δy)_e / ∂y_node`.
    edge_stencils: Vec<Vec<(usize, f64)>>,
}

/// Value, gradient over interior dofs and optionally the Hessian.
pub struct Assembly {
    pub terms: MechEnergyTerms,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
}

impl<'a> MechanicalProblem<'a> {
    pub fn new(grid: &'a Grid2D, material: &'a MaterialParams, input: &'a MechStepInput) -> Result<Self> {
        input.validate(grid)?;
        let f_prev = grid::grad_cells(grid, &input.y_prev)?;
        let theta_cells = input.theta_prev.cell_means(grid);
        let inv_dx = 1.0 / grid.dx();
        let edge_stencils = grid
            .edges()
            .iter()
            .map(|e| {
                let mut st: Vec<(usize, f64)> = Vec::with_capacity(10);
                for (slot, sign) in [(e.to, inv_dx), (e.from, -inv_dx)] {
                    for (node, w) in grid.laplacian_stencil(slot) {
                        match st.iter_mut().find(|(n, _)| *n == node) {
                            Some(entry) => entry.1 += sign * w,
                            None => st.push((node, sign * w)),
                        }
                    }
                }
                st
            })
            .collect();
        Ok(Self {
            grid,
            material,
            input,
            f_prev,
            theta_cells,
            node_weights: grid.node_weights(),
            edge_stencils,
        })
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.grid.interior().len()
    }

    #[inline]
    fn dof(&self, node: usize, comp: usize) -> Option<usize> {
        self.grid.interior_slot(node).map(|s| 2 * s + comp)
    }

    /// Overwrite the interior values of `base` with `dofs`.
    pub fn field_from_dofs(&self, base: &VectorField, dofs: &DVector<f64>) -> VectorField {
        let mut out = base.clone();
        for (s, &idx) in self.grid.interior().iter().enumerate() {
            out.0[idx] = Vector2::new(dofs[2 * s], dofs[2 * s + 1]);
        }
        out
    }

    pub fn dofs_from_field(&self, y: &VectorField) -> DVector<f64> {
        let mut d = DVector::zeros(self.num_dofs());
        for (s, &idx) in self.grid.interior().iter().enumerate() {
            d[2 * s] = y.0[idx][0];
            d[2 * s + 1] = y.0[idx][1];
        }
        d
    }

    /// Boundary values must match those of `y_prev`.
    fn check_admissible(&self, y: &VectorField) -> Result<()> {
        y.check(self.grid)?;
        for &b in self.grid.boundary() {
            if y.0[b] != self.input.y_prev.0[b] {
                return Err(Error::InvalidParameter(format!(
                    "boundary node {b} deviates from the Dirichlet data"
                )));
            }
        }
        Ok(())
    }

    pub fn energy(&self, y: &VectorField) -> Result<f64> {
        Ok(self.assemble(y, false, false)?.terms.total())
    }

    pub fn energy_terms(&self, y: &VectorField) -> Result<MechEnergyTerms> {
        Ok(self.assemble(y, false, false)?.terms)
    }

    pub fn gradient(&self, y: &VectorField) -> Result<DVector<f64>> {
        Ok(self.assemble(y, true, false)?.gradient)
    }

    pub fn assemble(&self, y: &VectorField, want_grad: bool, want_hess: bool) -> Result<Assembly> {
        self.check_admissible(y)?;
        let u = y.axpy(-1.0, &self.input.y_prev);
        self.assemble_split(y, &u, want_grad, want_hess)
    }

    /// Assemble at `y_prev + u` for interior increments `u`.
    /// The returned `y` is `y_prev + u` rounded; the stiff terms still see
    /// `u` itself.
    pub fn assemble_increment(&self, u: &DVector<f64>, want_grad: bool, want_hess: bool) -> Result<(VectorField, Assembly)> {
        let zero = VectorField::zeros(self.grid);
        let uf = self.field_from_dofs(&zero, u);
        let y = self.input.y_prev.axpy(1.0, &uf);
        let asm = self.assemble_split(&y, &uf, want_grad, want_hess)?;
        Ok((y, asm))
    }

    fn increment_of(&self, y: &VectorField) -> DVector<f64> {
        self.dofs_from_field(&y.axpy(-1.0, &self.input.y_prev))
    }

    /// The stiff linear terms read the increment `u = y - y_prev` directly,
    /// which keeps their gradient free of cancellation in `y`.
    fn assemble_split(&self, y: &VectorField, u: &VectorField, want_grad: bool, want_hess: bool) -> Result<Assembly> {
        let grid = self.grid;
        let mat = self.material;
        let inp = self.input;
        let tau = inp.tau;
        let nd = self.num_dofs();
        let mut terms = MechEnergyTerms::default();
        let mut g = DVector::zeros(if want_grad || want_hess { nd } else { 0 });
        let mut hess = if want_hess { Some(DMatrix::zeros(nd, nd)) } else { None };

        // Cell terms: elastic, coupling, dissipation.
        let wc = grid.cell_weight();
        let st = grid.gradient_stencil();
        let grads = grid::grad_cells(grid, y)?;
        let rates = grid::grad_cells(grid, u)?;
        for (c, f) in grads.iter().enumerate() {
            let fp = &self.f_prev[c];
            let th = self.theta_cells[c];
            let fdot = rates[c] / tau;
            terms.elastic += wc * mat.elastic_energy(f)?;
            terms.coupling += wc * mat.coupling_energy(f, th)?;
            terms.dissipation += wc * tau * mat.dissipation_potential(fp, &fdot, th);
            if !(want_grad || want_hess) {
                continue;
            }
            let stress = mat.elastic_stress(f)? + mat.coupling_stress(f, th)? + mat.viscous_stress(fp, &fdot, th);
            let sflat = flatten(&stress);
            let nodes = grid.cell_nodes(c);
            // Column b(a, r) of dF_flat / dy_(a, r).
            let mut cols: [(Option<usize>, Vector4<f64>); 8] = [(None, Vector4::zeros()); 8];
            for (k, (&a, (gx, gy))) in nodes.iter().zip(st).enumerate() {
                for r in 0..2 {
                    let mut b = Vector4::zeros();
                    b[2 * r] = gx;
                    b[2 * r + 1] = gy;
                    cols[2 * k + r] = (self.dof(a, r), b);
                }
            }
            for (dof, b) in &cols {
                if let Some(i) = dof {
                    g[*i] += wc * sflat.dot(b);
                }
            }
            if let Some(hm) = hess.as_mut() {
                let tangent: Matrix4<f64> = mat.elastic_tangent(f)? + mat.coupling_tangent(f, th)?
                    + mat.viscous_tangent(fp, th) / tau;
                for (di, bi) in &cols {
                    let Some(i) = di else { continue };
                    let tb = tangent * bi;
                    for (dj, bj) in &cols {
                        if let Some(j) = dj {
                            hm[(*i, *j)] += wc * tb.dot(bj);
                        }
                    }
                }
            }
        }

        // Strain-gradient term at interior nodes.
        let wp = grid.patch_weight();
        let lap = grid::laplacian_nodes(grid, y)?;
        for (s, v) in lap.iter().enumerate() {
            terms.strain_gradient += wp * mat.strain_gradient_energy(v);
            if !(want_grad || want_hess) {
                continue;
            }
            let dh = mat.strain_gradient_force(v);
            let stencil = grid.laplacian_stencil(s);
            for &(a, ca) in &stencil {
                for r in 0..2 {
                    if let Some(i) = self.dof(a, r) {
                        g[i] += wp * dh[r] * ca;
                    }
                }
            }
            if let Some(hm) = hess.as_mut() {
                let d2 = mat.strain_gradient_hessian(v);
                for &(a, ca) in &stencil {
                    for r in 0..2 {
                        let Some(i) = self.dof(a, r) else { continue };
                        for &(b, cb) in &stencil {
                            for q in 0..2 {
                                if let Some(j) = self.dof(b, q) {
                                    hm[(i, j)] += wp * ca * cb * d2[(r, q)];
                                }
                            }
                        }
                    }
                }
            }
        }

        // Third-gradient viscous regularization on interior edges.
        if inp.eps > 0.0 && !grid.edges().is_empty() {
            let third = grid::grad_laplacian_edges(grid, u)?;
            let coef = inp.eps / tau * wp;
            for (e, d) in third.iter().enumerate() {
                terms.regularization += 0.5 * coef * d.norm_squared();
                if !(want_grad || want_hess) {
                    continue;
                }
                let stencil = &self.edge_stencils[e];
                for &(a, ca) in stencil {
                    for r in 0..2 {
                        if let Some(i) = self.dof(a, r) {
                            g[i] += coef * d[r] * ca;
                        }
                    }
                }
                if let Some(hm) = hess.as_mut() {
                    for &(a, ca) in stencil {
                        for r in 0..2 {
                            let Some(i) = self.dof(a, r) else { continue };
                            for &(b, cb) in stencil {
                                if let Some(j) = self.dof(b, r) {
                                    hm[(i, j)] += coef * ca * cb;
                                }
                            }
                        }
                    }
                }
            }
        }

        // Nodal terms: dead load and time-delayed inertia.
        let inertia_coef = inp.rho * tau / (2.0 * inp.h);
        for (idx, w) in self.node_weights.iter().enumerate() {
            let yv = y.0[idx];
            let fv = inp.f_avg.0[idx];
            terms.load -= w * fv.dot(&yv);
            let rel = u.0[idx] / tau - inp.delayed_velocity.0[idx];
            terms.inertia += inertia_coef * w * rel.norm_squared();
            if !(want_grad || want_hess) {
                continue;
            }
            for r in 0..2 {
                if let Some(i) = self.dof(idx, r) {
                    g[i] += -w * fv[r] + inp.rho / inp.h * w * rel[r];
                    if let Some(hm) = hess.as_mut() {
                        hm[(i, i)] += inp.rho / (inp.h * tau) * w;
                    }
                }
            }
        }

        Ok(Assembly {
            terms,
            gradient: g,
            hessian: hess,
        })
    }

    /// Damped Newton on the increment with Hessian shifts and a
    /// determinant-guarded Armijo line search. Once the energy is flat to
    /// rounding, a few non-improving moves are allowed and the best iterate
    /// seen is kept. The report carries the final increment.
    pub fn solve(&self, y_init: &VectorField, settings: &NewtonSettings) -> Result<(VectorField, SolveReport)> {
        self.check_admissible(y_init)?;
        let mut x = self.increment_of(y_init);
        let (mut y, mut asm) = self.assemble_increment(&x, true, true)?;
        let mut energy = asm.terms.total();
        let mut report = SolveReport {
            min_det: grid::min_det(self.grid, &y)?,
            energy_history: vec![energy],
            ..Default::default()
        };
        let nd = self.num_dofs();
        let mut polish_moves = 0usize;
        let mut best: Option<(f64, VectorField, DVector<f64>)> = None;
        let finish = |best: Option<(f64, VectorField, DVector<f64>)>, mut report: SolveReport, reason: &str, iterations: usize| {
            match best {
                Some((r, y, x)) if r <= settings.tolerance => {
                    report.residual = r;
                    report.increment = x.as_slice().to_vec();
                    Ok((y, report))
                }
                _ => Err(Error::MechanicalSolve {
                    reason: reason.into(),
                    iterations,
                    residual: report.residual,
                    min_det: report.min_det,
                }),
            }
        };
        for iter in 0..=settings.max_iterations {
            let scaled = asm.gradient.norm() / (1.0 + energy.abs());
            report.residual = scaled;
            report.iterations = iter;
            if nd == 0 || scaled <= settings.tolerance {
                report.increment = x.as_slice().to_vec();
                return Ok((y, report));
            }
            if best.as_ref().is_none_or(|(r, _, _)| scaled < *r) {
                best = Some((scaled, y.clone(), x.clone()));
            }
            if iter == settings.max_iterations {
                break;
            }
            let hessian = asm.hessian.take().expect("hessian requested");
            let direction = newton_direction(hessian, &asm.gradient);
            let slope = asm.gradient.dot(&direction);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=settings.max_backtracks {
                let xt = &x + &direction * step;
                if let Ok((_, trial)) = self.assemble_increment(&xt, false, false) {
                    let e = trial.terms.total();
                    let flat = (e - energy).abs() <= 1e-14 * (1.0 + energy.abs());
                    if e <= energy + settings.armijo * step * slope || flat {
                        let (yt, trial_asm) = self.assemble_increment(&xt, true, true)?;
                        let improves = trial_asm.gradient.norm() < asm.gradient.norm();
                        if !flat || improves || polish_moves < MAX_POLISH_MOVES {
                            if flat && !improves {
                                polish_moves += 1;
                            }
                            accepted = Some((xt, yt, trial_asm, e));
                            break;
                        }
                    }
                }
                step *= 0.5;
                report.backtracks += 1;
            }
            let Some((xt, yt, trial_asm, e)) = accepted else {
                return finish(best, report, "line search exhausted its backtracks", iter);
            };
            x = xt;
            y = yt;
            asm = trial_asm;
            energy = e;
            report.energy_history.push(e);
            report.min_det = report.min_det.min(grid::min_det(self.grid, &y)?);
        }
        finish(best, report, "maximum Newton iterations reached", settings.max_iterations)
    }
}

/// Non-improving moves allowed in the rounding-dominated regime.
const MAX_POLISH_MOVES: usize = 20;

/// Solve `(H + λI) d = -g` with the smallest shift `λ` from a geometric
/// ladder that makes the matrix positive definite; fall back to steepest
/// descent.
fn newton_direction(hessian: DMatrix<f64>, gradient: &DVector<f64>) -> DVector<f64> {
    let n = gradient.len();
    let diag_scale = (0..n).map(|i| hessian[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut shift = 0.0;
    for _ in 0..40 {
        let mut m = hessian.clone();
        for i in 0..n {
            m[(i, i)] += shift;
        }
        if let Some(ch) = m.cholesky() {
            let d = -ch.solve(gradient);
            if d.iter().all(|v| v.is_finite()) && gradient.dot(&d) < 0.0 {
                return d;
            }
        }
        shift = if shift == 0.0 { 1e-10 * diag_scale } else { shift * 10.0 };
    }
    -gradient.clone()
}

/// Convenience wrapper: build the problem and solve from `y_init`
/// (defaults to `y_prev`).
pub fn solve_mech_step(
    grid: &Grid2D,
    material: &MaterialParams,
    input: &MechStepInput,
    y_init: Option<&VectorField>,
    settings: &NewtonSettings,
) -> Result<(VectorField, SolveReport)> {
    let problem = MechanicalProblem::new(grid, material, input)?;
    problem.solve(y_init.unwrap_or(&input.y_prev), settings)
}

/// Mechanical energy `M(y) = Σ W_el(∇y) + Σ H(Δy)` with the step quadrature.
pub fn mechanical_energy(grid: &Grid2D, material: &MaterialParams, y: &VectorField) -> Result<f64> {
    let (el, sg) = mechanical_energy_parts(grid, material, y)?;
    Ok(el + sg)
}

/// `(W_el-sum, H-sum)`.
pub fn mechanical_energy_parts(grid: &Grid2D, material: &MaterialParams, y: &VectorField) -> Result<(f64, f64)> {
    let mut el = 0.0;
    for f in grid::grad_cells(grid, y)? {
        el += material.elastic_energy(&f)?;
    }
    let sg: f64 = grid::laplacian_nodes(grid, y)?
        .iter()
        .map(|v| material.strain_gradient_energy(v))
        .sum();
    Ok((el * grid.cell_weight(), sg * grid.patch_weight()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(grid: &Grid2D, theta: f64) -> MechStepInput {
        MechStepInput {
            y_prev: VectorField::identity(grid),
            theta_prev: ScalarField::constant(grid, theta),
            delayed_velocity: VectorField::zeros(grid),
            f_avg: VectorField::zeros(grid),
            tau: 0.01,
            h: 0.04,
            eps: 1e-3,
            rho: 1.0,
        }
    }

    #[test]
    fn zero_increment_value() {
        let g = Grid2D::new(5).unwrap();
        let m = MaterialParams::default();
        let inp = input(&g, 0.7);
        let p = MechanicalProblem::new(&g, &m, &inp).unwrap();
        let t = p.energy_terms(&inp.y_prev).unwrap();
        assert_eq!(t.dissipation, 0.0);
        assert_eq!(t.regularization, 0.0);
        assert_eq!(t.inertia, 0.0);
        let expected = mechanical_energy(&g, &m, &inp.y_prev).unwrap()
            + m.coupling_energy(&Matrix2::identity(), 0.7).unwrap();
        assert!((t.total() - t.load - expected).abs() < 1e-13);
    }

    #[test]
    fn inertia_penalty_value_and_gradient() {
        let g = Grid2D::new(5).unwrap();
        let m = MaterialParams::default();
        let mut inp = input(&g, 1.0);
        inp.delayed_velocity = VectorField::from_fn(&g, |x, y| {
            let b = (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin();
            Vector2::new(b, -0.5 * b)
        });
        let p = MechanicalProblem::new(&g, &m, &inp).unwrap();
        let t = p.energy_terms(&inp.y_prev).unwrap();
        let expected = inp.rho * inp.tau / (2.0 * inp.h) * inp.delayed_velocity.l2_norm_squared(&g);
        assert!((t.inertia - expected).abs() < 1e-15);

        // At y = y_prev every other gradient contribution vanishes (identity
        // is stress-free, coupling stress is constant and sums to zero).
        let grad = p.gradient(&inp.y_prev).unwrap();
        let w = g.node_weights();
        for (s, &idx) in g.interior().iter().enumerate() {
            for r in 0..2 {
                let expected = -inp.rho / inp.h * w[idx] * inp.delayed_velocity.0[idx][r];
                assert!((grad[2 * s + r] - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn identity_is_stationary_at_rest() {
        let g = Grid2D::new(6).unwrap();
        let m = MaterialParams::default();
        let inp = input(&g, 1.0);
        let (y, rep) = solve_mech_step(&g, &m, &inp, None, &NewtonSettings::default()).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(y, inp.y_prev);
    }

    #[test]
    fn loaded_step_converges_and_descends() {
        let g = Grid2D::new(6).unwrap();
        let m = MaterialParams::default();
        let mut inp = input(&g, 1.0);
        inp.f_avg = VectorField::from_fn(&g, |_, _| Vector2::new(0.0, -3.0));
        let p = MechanicalProblem::new(&g, &m, &inp).unwrap();
        let (y, rep) = p.solve(&inp.y_prev, &NewtonSettings::default()).unwrap();
        assert!(rep.residual <= 1e-8);
        assert!(p.energy(&y).unwrap() <= p.energy(&inp.y_prev).unwrap() + 1e-12);
        for w in rep.energy_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14 * (1.0 + w[0].abs()));
        }
        assert!(rep.min_det > 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let g = Grid2D::new(4).unwrap();
        let m = MaterialParams::default();
        let mut inp = input(&g, 1.0);
        inp.tau = inp.h;
        assert!(MechanicalProblem::new(&g, &m, &inp).is_err());
        let mut inp = input(&g, 1.0);
        inp.theta_prev.0[3] = -1.0;
        assert!(MechanicalProblem::new(&g, &m, &inp).is_err());
        let inp = input(&g, 1.0);
        let p = MechanicalProblem::new(&g, &m, &inp).unwrap();
        let mut folded = inp.y_prev.clone();
        let s = g.interior()[0];
        folded.0[s] = Vector2::new(0.9, 0.9);
        assert!(matches!(p.energy(&folded), Err(Error::NonPositiveDeterminant { .. })));
    }
}
