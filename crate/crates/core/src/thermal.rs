//! The thermal half-step: a convex minimization in the nodal temperatures
//! with the deformation frozen at the new mechanical state.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::grid::{self, Grid2D, ScalarField, VectorField};
use crate::material::{contract, MaterialParams};

/// Data frozen during one thermal step.
#[derive(Clone, Debug)]
pub struct ThermalStepInput {
    pub y_new: VectorField,
    pub y_prev: VectorField,
    pub theta_prev: ScalarField,
    /// Interval average of the external temperature; only boundary entries are read.
    pub theta_b_avg: ScalarField,
    pub tau: f64,
    pub eps: f64,
    pub kappa: f64,
    /// Per cell: `ξ(∇y_prev, δ∇y, θ_prev)`.
    pub dissipation_source: Vec<f64>,
    /// Per interior edge: `ε |δ∇Δy|² ∧ τ⁻¹`.
    pub eps_source: Vec<f64>,
    /// Per cell: `∂_F W_cpl(∇y_prev, θ_prev) : δ∇y`.
    pub coupling_source: Vec<f64>,
}

impl ThermalStepInput {
    /// Build the input with all heat sources evaluated from the mechanical update.
    #[allow(clippy::too_many_arguments)]
    pub fn from_mechanics(
        grid: &Grid2D,
        material: &MaterialParams,
        y_new: &VectorField,
        y_prev: &VectorField,
        theta_prev: &ScalarField,
        theta_b_avg: &ScalarField,
        tau: f64,
        eps: f64,
        kappa: f64,
    ) -> Result<Self> {
        let f_new = grid::grad_cells(grid, y_new)?;
        let f_prev = grid::grad_cells(grid, y_prev)?;
        let th = theta_prev.cell_means(grid);
        let mut dissipation_source = Vec::with_capacity(f_new.len());
        let mut coupling_source = Vec::with_capacity(f_new.len());
        for c in 0..f_new.len() {
            let fdot = (f_new[c] - f_prev[c]) / tau;
            dissipation_source.push(material.dissipation_rate(&f_prev[c], &fdot, th[c]));
            coupling_source.push(contract(&material.coupling_stress(&f_prev[c], th[c])?, &fdot));
        }
        let eps_source = third_gradient_rates(grid, y_new, y_prev, tau)?
            .iter()
            .map(|d| (eps * d.norm_squared()).min(1.0 / tau))
            .collect();
        Ok(Self {
            y_new: y_new.clone(),
            y_prev: y_prev.clone(),
            theta_prev: theta_prev.clone(),
            theta_b_avg: theta_b_avg.clone(),
            tau,
            eps,
            kappa,
            dissipation_source,
            eps_source,
            coupling_source,
        })
    }

    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        self.y_new.check(grid)?;
        self.y_prev.check(grid)?;
        self.theta_prev.check(grid)?;
        self.theta_b_avg.check(grid)?;
        for (v, expected) in [
            (&self.dissipation_source, grid.num_cells()),
            (&self.coupling_source, grid.num_cells()),
            (&self.eps_source, grid.edges().len()),
        ] {
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    expected,
                    got: v.len(),
                });
            }
        }
        if !(self.tau > 0.0) || !(self.eps >= 0.0) || !(self.kappa >= 0.0) {
            return Err(Error::InvalidParameter("tau > 0, eps >= 0, kappa >= 0 required".into()));
        }
        if let Some(s) = self.dissipation_source.iter().find(|s| !(**s >= 0.0)) {
            return Err(Error::InvalidParameter(format!("negative dissipation source {s:e}")));
        }
        let cap = 1.0 / self.tau;
        if let Some(s) = self.eps_source.iter().find(|s| !(**s >= 0.0 && **s <= cap * (1.0 + 1e-15))) {
            return Err(Error::InvalidParameter(format!("eps source {s:e} outside [0, 1/tau]")));
        }
        if let Some(t) = self.theta_prev.0.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::NegativeTemperature(*t));
        }
        Ok(())
    }
}

/// `δ_τ ∇Δy` on interior edges.
pub fn third_gradient_rates(grid: &Grid2D, y_new: &VectorField, y_prev: &VectorField, tau: f64) -> Result<Vec<Vector2<f64>>> {
    let a = grid::grad_laplacian_edges(grid, y_new)?;
    let b = grid::grad_laplacian_edges(grid, y_prev)?;
    Ok(a.iter().zip(&b).map(|(a, b)| (a - b) / tau).collect())
}

/// Q1 stiffness `∫ 𝒦 ∇φ_i · ∇φ_j` with 2×2 Gauss points and one conductivity per cell.
pub fn stiffness_matrix(grid: &Grid2D, cell_conductivity: &[Matrix2<f64>]) -> Result<DMatrix<f64>> {
    if cell_conductivity.len() != grid.num_cells() {
        return Err(Error::DimensionMismatch {
            expected: grid.num_cells(),
            got: cell_conductivity.len(),
        });
    }
    let n = grid.num_nodes();
    let dx = grid.dx();
    let g = 0.5 / 3f64.sqrt();
    let pts = [0.5 - g, 0.5 + g];
    let mut k = DMatrix::zeros(n, n);
    for (c, kc) in cell_conductivity.iter().enumerate() {
        let nodes = grid.cell_nodes(c);
        let mut local = [[0.0; 4]; 4];
        for &xi in &pts {
            for &eta in &pts {
                // Shape gradients in physical coordinates, node order as cell_nodes.
                let b = [
                    Vector2::new(-(1.0 - eta), -(1.0 - xi)) / dx,
                    Vector2::new(1.0 - eta, -xi) / dx,
                    Vector2::new(-eta, 1.0 - xi) / dx,
                    Vector2::new(eta, xi) / dx,
                ];
                for a in 0..4 {
                    let kb = kc * b[a];
                    for (bb, row) in b.iter().zip(local[a].iter_mut()) {
                        *row += 0.25 * dx * dx * kb.dot(bb);
                    }
                }
            }
        }
        for a in 0..4 {
            for bb in 0..4 {
                k[(nodes[a], nodes[bb])] += local[a][bb];
            }
        }
    }
    Ok(k)
}

/// Conductivity frozen at the old state: `𝒦(∇y_prev, θ_prev)` per cell.
pub fn frozen_conductivity(
    grid: &Grid2D,
    material: &MaterialParams,
    y_prev: &VectorField,
    theta_prev: &ScalarField,
) -> Result<Vec<Matrix2<f64>>> {
    let f = grid::grad_cells(grid, y_prev)?;
    let th = theta_prev.cell_means(grid);
    f.iter()
        .zip(&th)
        .map(|(f, t)| material.pullback_conductivity(f, *t))
        .collect()
}

/// Nodal internal energy `W_in(F_node, θ_node)` with averaged nodal gradients.
pub fn nodal_internal_energy(
    grid: &Grid2D,
    material: &MaterialParams,
    y: &VectorField,
    theta: &ScalarField,
) -> Result<ScalarField> {
    let f = grid::nodal_gradients(grid, &grid::grad_cells(grid, y)?);
    let w = f
        .iter()
        .zip(&theta.0)
        .map(|(f, t)| material.internal_energy(f, *t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScalarField(w))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThermalSolveReport {
    pub iterations: usize,
    /// Final scaled residual `‖g‖₂ / (1 + |Φ|)`.
    pub residual: f64,
    pub min_theta: f64,
    pub clamped_nodes: usize,
    /// Largest magnitude removed by clamping to zero.
    pub clamp_magnitude: f64,
    pub projected: bool,
}

/// Per-node rows of the thermal Euler–Lagrange system and their pieces.
#[derive(Clone, Debug, PartialEq)]
pub struct ThermalResidual {
    pub rows: Vec<f64>,
    pub max_abs: f64,
    /// Scaled residual `‖rows‖₂ / (1 + |Φ|)`.
    pub scaled: f64,
    /// Sum of rows, i.e. the test with `φ ≡ 1`.
    pub row_sum: f64,
    pub internal_rate: f64,
    pub robin: f64,
    pub sources: f64,
}

pub struct ThermalProblem<'a> {
    pub grid: &'a Grid2D,
    pub material: &'a MaterialParams,
    pub input: &'a ThermalStepInput,
    node_f: Vec<Matrix2<f64>>,
    w_prev: Vec<f64>,
    node_weights: Vec<f64>,
    boundary_weights: Vec<f64>,
    stiffness: DMatrix<f64>,
    /// Nodal load vector `∫ sources φ_n`.
    load: DVector<f64>,
}

impl<'a> ThermalProblem<'a> {
    pub fn new(grid: &'a Grid2D, material: &'a MaterialParams, input: &'a ThermalStepInput) -> Result<Self> {
        input.validate(grid)?;
        let node_f = grid::nodal_gradients(grid, &grid::grad_cells(grid, &input.y_new)?);
        let w_prev = nodal_internal_energy(grid, material, &input.y_prev, &input.theta_prev)?.0;
        let stiffness = stiffness_matrix(
            grid,
            &frozen_conductivity(grid, material, &input.y_prev, &input.theta_prev)?,
        )?;
        let wc = grid.cell_weight();
        let mut load = DVector::zeros(grid.num_nodes());
        for c in 0..grid.num_cells() {
            let s = input.dissipation_source[c] + input.coupling_source[c];
            for a in grid.cell_nodes(c) {
                load[a] += 0.25 * wc * s;
            }
        }
        let interior = grid.interior();
        for (e, s) in grid.edges().iter().zip(&input.eps_source) {
            load[interior[e.from]] += 0.5 * wc * s;
            load[interior[e.to]] += 0.5 * wc * s;
        }
        Ok(Self {
            grid,
            material,
            input,
            node_f,
            w_prev,
            node_weights: grid.node_weights(),
            boundary_weights: grid.boundary_weights(),
            stiffness,
            load,
        })
    }

    pub fn stiffness(&self) -> &DMatrix<f64> {
        &self.stiffness
    }

    /// `∫ sources` with the step quadrature.
    pub fn total_source(&self) -> f64 {
        self.load.sum()
    }

    pub fn w_prev(&self) -> &[f64] {
        &self.w_prev
    }

    fn boundary_pairs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.grid
            .boundary()
            .iter()
            .zip(&self.boundary_weights)
            .map(|(&b, &w)| (b, w))
    }

    pub fn functional(&self, theta: &ScalarField) -> Result<f64> {
        theta.check(self.grid)?;
        let tau = self.input.tau;
        let mut v = 0.0;
        for (n, t) in theta.0.iter().enumerate() {
            let prim = self.material.internal_energy_primitive(&self.node_f[n], *t)?;
            v += self.node_weights[n] / tau * (prim - self.w_prev[n] * t);
        }
        let th = DVector::from_column_slice(&theta.0);
        v += 0.5 * th.dot(&(&self.stiffness * &th)) - self.load.dot(&th);
        for (b, w) in self.boundary_pairs() {
            let d = theta.0[b] - self.input.theta_b_avg.0[b];
            v += 0.5 * self.input.kappa * w * d * d;
        }
        Ok(v)
    }

    fn gradient_and_hessian(&self, theta: &ScalarField, want_hess: bool) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
        let tau = self.input.tau;
        let th = DVector::from_column_slice(&theta.0);
        let mut g = &self.stiffness * &th - &self.load;
        let mut h = if want_hess { Some(self.stiffness.clone()) } else { None };
        for n in 0..theta.0.len() {
            let w = self.material.internal_energy(&self.node_f[n], theta.0[n])?;
            g[n] += self.node_weights[n] / tau * (w - self.w_prev[n]);
            if let Some(h) = h.as_mut() {
                h[(n, n)] += self.node_weights[n] / tau * self.material.heat_capacity(&self.node_f[n], theta.0[n])?;
            }
        }
        for (b, w) in self.boundary_pairs() {
            g[b] += self.input.kappa * w * (theta.0[b] - self.input.theta_b_avg.0[b]);
            if let Some(h) = h.as_mut() {
                h[(b, b)] += self.input.kappa * w;
            }
        }
        Ok((g, h))
    }

    pub fn gradient(&self, theta: &ScalarField) -> Result<DVector<f64>> {
        Ok(self.gradient_and_hessian(theta, false)?.0)
    }

    pub fn hessian(&self, theta: &ScalarField) -> Result<DMatrix<f64>> {
        Ok(self.gradient_and_hessian(theta, true)?.1.expect("requested"))
    }

    /// Euler–Lagrange rows over the nodal test basis.
    pub fn residual(&self, theta: &ScalarField) -> Result<ThermalResidual> {
        let g = self.gradient(theta)?;
        let mut internal_rate = 0.0;
        for n in 0..theta.0.len() {
            let w = self.material.internal_energy(&self.node_f[n], theta.0[n])?;
            internal_rate += self.node_weights[n] * (w - self.w_prev[n]) / self.input.tau;
        }
        let robin = self
            .boundary_pairs()
            .map(|(b, w)| self.input.kappa * w * (theta.0[b] - self.input.theta_b_avg.0[b]))
            .sum();
        let phi = self.functional(theta)?;
        Ok(ThermalResidual {
            max_abs: g.amax(),
            scaled: g.norm() / (1.0 + phi.abs()),
            row_sum: g.sum(),
            rows: g.iter().copied().collect(),
            internal_rate,
            robin,
            sources: self.total_source(),
        })
    }

    pub fn solve(&self, theta_init: &ScalarField) -> Result<(ScalarField, ThermalSolveReport)> {
        theta_init.check(self.grid)?;
        if let Some(t) = theta_init.0.iter().find(|t| !(**t >= 0.0)) {
            return Err(Error::NegativeTemperature(*t));
        }
        let mut report = ThermalSolveReport::default();
        let mut theta = theta_init.clone();
        let mut phi = self.functional(&theta)?;
        let target = 1e-13;
        let max_iter = 100;
        for iter in 0..max_iter {
            let (g, h) = self.gradient_and_hessian(&theta, true)?;
            let scaled = g.norm() / (1.0 + phi.abs());
            report.iterations = iter;
            report.residual = scaled;
            if scaled <= target {
                break;
            }
            let h = h.expect("requested");
            let Some(ch) = h.cholesky() else {
                return Err(self.failure("thermal Hessian not positive definite", iter, scaled, &theta));
            };
            let d = -ch.solve(&g);
            let slope = g.dot(&d);
            let mut step = 1.0;
            let mut next = None;
            for _ in 0..60 {
                let mut trial = ScalarField(theta.0.iter().zip(d.iter()).map(|(t, d)| t + step * d).collect());
                let min = trial.min();
                if min < -1e-10 {
                    if step == 1.0 {
                        report.projected = true;
                        return self.projected_gradient(theta, report);
                    }
                    step *= 0.5;
                    continue;
                }
                if min < 0.0 {
                    for t in trial.0.iter_mut().filter(|t| **t < 0.0) {
                        report.clamped_nodes += 1;
                        report.clamp_magnitude = report.clamp_magnitude.max(-*t);
                        *t = 0.0;
                    }
                }
                let v = self.functional(&trial)?;
                let flat = (v - phi).abs() <= 1e-15 * (1.0 + phi.abs());
                if v <= phi + 1e-4 * step * slope || flat {
                    next = Some((trial, v));
                    break;
                }
                step *= 0.5;
            }
            match next {
                Some((t, v)) => {
                    let stalled = (v - phi).abs() <= 1e-15 * (1.0 + phi.abs());
                    theta = t;
                    phi = v;
                    if stalled {
                        let g = self.gradient(&theta)?;
                        report.residual = g.norm() / (1.0 + phi.abs());
                        report.iterations = iter + 1;
                        break;
                    }
                }
                None => break,
            }
        }
        self.finish(theta, report)
    }

    fn finish(&self, theta: ScalarField, mut report: ThermalSolveReport) -> Result<(ScalarField, ThermalSolveReport)> {
        let g = self.gradient(&theta)?;
        let phi = self.functional(&theta)?;
        report.residual = g.norm() / (1.0 + phi.abs());
        report.min_theta = theta.min();
        if report.residual > 1e-8 {
            return Err(self.failure("no convergence", report.iterations, report.residual, &theta));
        }
        Ok((theta, report))
    }

    fn failure(&self, reason: &str, iterations: usize, residual: f64, theta: &ScalarField) -> Error {
        Error::ThermalSolve {
            reason: reason.into(),
            iterations,
            residual,
            min_theta: theta.min(),
        }
    }

    /// Projected gradient with Armijo backtracking on `θ ≥ 0`.
    fn projected_gradient(&self, mut theta: ScalarField, mut report: ThermalSolveReport) -> Result<(ScalarField, ThermalSolveReport)> {
        let mut phi = self.functional(&theta)?;
        for iter in 0..20_000 {
            let g = self.gradient(&theta)?;
            let pg: f64 = theta
                .0
                .iter()
                .zip(g.iter())
                .map(|(t, gi)| if *t <= 0.0 && *gi > 0.0 { 0.0 } else { gi * gi })
                .sum::<f64>()
                .sqrt();
            report.iterations += 1;
            if pg / (1.0 + phi.abs()) <= 1e-12 {
                break;
            }
            let mut step = 1.0 / self.hessian(&theta)?.diagonal().max();
            let mut moved = false;
            for _ in 0..60 {
                let trial = ScalarField(theta.0.iter().zip(g.iter()).map(|(t, gi)| (t - step * gi).max(0.0)).collect());
                let v = self.functional(&trial)?;
                let decrease: f64 = theta.0.iter().zip(&trial.0).zip(g.iter()).map(|((a, b), gi)| gi * (a - b)).sum();
                if v <= phi - 1e-4 * decrease {
                    moved = v < phi;
                    theta = trial;
                    phi = v;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                report.iterations = iter;
                break;
            }
        }
        // A minimizer with an active bound has no stationary unconstrained rows.
        let g = self.gradient(&theta)?;
        let active = theta.0.iter().zip(g.iter()).filter(|(t, gi)| **t <= 0.0 && **gi > 1e-8).count();
        if active > 0 {
            let unconstrained = self.hessian(&theta)?.cholesky().map(|ch| {
                let d = -ch.solve(&g);
                theta.0.iter().zip(d.iter()).map(|(t, d)| t + d).fold(f64::INFINITY, f64::min)
            });
            let depth = unconstrained.unwrap_or(f64::NEG_INFINITY);
            return Err(self.failure(
                &format!("nonnegativity bound active at {active} nodes (unconstrained minimum {depth:e})"),
                report.iterations,
                g.norm() / (1.0 + phi.abs()),
                &theta,
            ));
        }
        self.finish(theta, report)
    }
}

pub fn solve_thermal_step(
    grid: &Grid2D,
    material: &MaterialParams,
    input: &ThermalStepInput,
    theta_init: Option<&ScalarField>,
) -> Result<(ScalarField, ThermalSolveReport)> {
    let p = ThermalProblem::new(grid, material, input)?;
    p.solve(theta_init.unwrap_or(&input.theta_prev))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frozen(grid: &Grid2D, theta: ScalarField, kappa: f64) -> ThermalStepInput {
        let id = VectorField::identity(grid);
        let m = MaterialParams::default();
        ThermalStepInput::from_mechanics(grid, &m, &id, &id, &theta, &ScalarField::constant(grid, 1.0), 0.01, 1e-3, kappa)
            .unwrap()
    }

    #[test]
    fn equilibrium_is_fixed() {
        let g = Grid2D::new(5).unwrap();
        let m = MaterialParams::default();
        let inp = frozen(&g, ScalarField::constant(&g, 1.0), 1.0);
        let p = ThermalProblem::new(&g, &m, &inp).unwrap();
        let r = p.residual(&inp.theta_prev).unwrap();
        assert!(r.max_abs < 1e-13);
        let (t, rep) = p.solve(&inp.theta_prev).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(t, inp.theta_prev);
    }

    #[test]
    fn functional_examples() {
        let g = Grid2D::new(4).unwrap();
        let m = MaterialParams::default();
        let inp = frozen(&g, ScalarField::constant(&g, 0.8), 2.0);
        let p = ThermalProblem::new(&g, &m, &inp).unwrap();
        // θ = 0 leaves only the boundary term.
        let zero = p.functional(&ScalarField::constant(&g, 0.0)).unwrap();
        assert!((zero - 0.5 * 2.0 * 4.0).abs() < 1e-13);
        // Adding a constant source c lowers the value by c ∫θ.
        let mut inp2 = inp.clone();
        inp2.dissipation_source.iter_mut().for_each(|s| *s += 0.3);
        let p2 = ThermalProblem::new(&g, &m, &inp2).unwrap();
        let th = ScalarField::from_fn(&g, |x, y| 0.5 + x * y);
        let diff = p.functional(&th).unwrap() - p2.functional(&th).unwrap();
        let integral: f64 = th.cell_means(&g).iter().sum::<f64>() * g.cell_weight();
        assert!((diff - 0.3 * integral).abs() < 1e-13);
    }

    #[test]
    fn insulated_energy_is_conserved() {
        let g = Grid2D::new(6).unwrap();
        let m = MaterialParams::default();
        let th = ScalarField::from_fn(&g, |x, y| 1.0 + 0.5 * (3.0 * x).sin() * y);
        let inp = frozen(&g, th, 0.0);
        let p = ThermalProblem::new(&g, &m, &inp).unwrap();
        let (t, _) = p.solve(&inp.theta_prev).unwrap();
        let w_new = nodal_internal_energy(&g, &m, &inp.y_new, &t).unwrap();
        let a = grid::integrate_nodes(&g, &w_new.0);
        let b = grid::integrate_nodes(&g, p.w_prev());
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn uniform_source_raises_energy() {
        let g = Grid2D::new(5).unwrap();
        let m = MaterialParams::default();
        let mut inp = frozen(&g, ScalarField::constant(&g, 1.0), 0.0);
        inp.dissipation_source.iter_mut().for_each(|s| *s = 2.0);
        let p = ThermalProblem::new(&g, &m, &inp).unwrap();
        let (t, _) = p.solve(&inp.theta_prev).unwrap();
        let r = p.residual(&t).unwrap();
        assert!((r.internal_rate - 2.0).abs() < 1e-10);
        assert!((r.row_sum - (r.internal_rate + r.robin - r.sources)).abs() < 1e-12);
        assert!(t.min() > 1.0);
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let g = Grid2D::new(5).unwrap();
        let m = MaterialParams::default();
        let y = VectorField::from_fn(&g, |x, y| Vector2::new(x + 0.05 * x * y, y - 0.02 * x * x));
        let k = stiffness_matrix(&g, &frozen_conductivity(&g, &m, &y, &ScalarField::constant(&g, 0.5)).unwrap()).unwrap();
        for i in 0..k.nrows() {
            assert!(k.row(i).sum().abs() < 1e-13);
        }
        assert!((&k - k.transpose()).amax() < 1e-15);
    }
}
