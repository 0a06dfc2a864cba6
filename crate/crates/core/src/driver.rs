//! Scheme configuration, initial data and the staggered time loop.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid2D, ScalarField, VectorField};
use crate::material::MaterialParams;
use crate::mechanics::{self, MechStepInput, NewtonSettings, SolveReport};
use crate::thermal::{self, ThermalSolveReport, ThermalStepInput};

/// Spatial profile of the dead force.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ForceShape {
    None,
    Uniform { value: [f64; 2] },
    /// `amplitude · exp(-|x - center|² / (2 width²))`.
    Gaussian {
        amplitude: [f64; 2],
        center: [f64; 2],
        width: f64,
    },
}

/// `f(x, t) = shape(x) · (c0 + c1 t + c2 t²)` and a spatially uniform
/// external temperature `θ_b(t) = b0 + b1 t + b2 t²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub shape: ForceShape,
    pub time_coeffs: [f64; 3],
    pub theta_b: [f64; 3],
}

impl Default for ForcingSpec {
    fn default() -> Self {
        Self {
            shape: ForceShape::None,
            time_coeffs: [1.0, 0.0, 0.0],
            theta_b: [1.0, 0.0, 0.0],
        }
    }
}

fn poly(c: &[f64; 3], t: f64) -> f64 {
    c[0] + t * (c[1] + t * c[2])
}

fn bubble(x: f64, y: f64, mx: u32, my: u32) -> f64 {
    (mx as f64 * PI * x).sin() * (my as f64 * PI * y).sin()
}

impl ForcingSpec {
    /// Spatial profile with unit time factor.
    pub fn shape_field(&self, grid: &Grid2D) -> VectorField {
        match &self.shape {
            ForceShape::None => VectorField::zeros(grid),
            ForceShape::Uniform { value } => VectorField::from_fn(grid, |_, _| Vector2::new(value[0], value[1])),
            ForceShape::Gaussian {
                amplitude,
                center,
                width,
            } => VectorField::from_fn(grid, |x, y| {
                let r2 = (x - center[0]).powi(2) + (y - center[1]).powi(2);
                Vector2::new(amplitude[0], amplitude[1]) * (-r2 / (2.0 * width * width)).exp()
            }),
        }
    }

    pub fn force_at(&self, grid: &Grid2D, t: f64) -> VectorField {
        let mut f = self.shape_field(grid);
        let s = poly(&self.time_coeffs, t);
        f.0.iter_mut().for_each(|v| *v *= s);
        f
    }

    pub fn theta_b_at(&self, t: f64) -> f64 {
        poly(&self.theta_b, t)
    }

    pub fn validate(&self) -> Result<()> {
        if let ForceShape::Gaussian { width, .. } = self.shape {
            if !(width > 0.0) {
                return Err(Error::Config("forcing width must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Average of `g` over `(a, b)` by 3-point Gauss–Legendre quadrature.
pub fn gauss_average<T>(a: f64, b: f64, g: impl Fn(f64) -> T) -> T
where
    T: std::ops::Add<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let off = half * (0.6f64).sqrt();
    g(mid - off) * (5.0 / 18.0) + g(mid) * (8.0 / 18.0) + g(mid + off) * (5.0 / 18.0)
}

/// `f_τ^(k)`: mean of the force over `((k-1)τ, kτ]`.
pub fn time_average_force(spec: &ForcingSpec, grid: &Grid2D, k: usize, tau: f64) -> VectorField {
    let a = (k as f64 - 1.0) * tau;
    let avg = gauss_average(a, a + tau, |t| poly(&spec.time_coeffs, t));
    let mut f = spec.shape_field(grid);
    f.0.iter_mut().for_each(|v| *v *= avg);
    f
}

/// Mean external temperature over `((k-1)τ, kτ]`.
pub fn time_average_theta_b(spec: &ForcingSpec, k: usize, tau: f64) -> f64 {
    let a = (k as f64 - 1.0) * tau;
    gauss_average(a, a + tau, |t| spec.theta_b_at(t))
}

/// Initial deformation, velocity and temperature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialSpec {
    /// `y0 = id + a · sin(mπx) sin(mπy)`.
    pub y0_amplitude: [f64; 2],
    pub y0_mode: [u32; 2],
    /// `y0' = b · sin(mπx) sin(mπy)`.
    pub v0_amplitude: [f64; 2],
    pub v0_mode: [u32; 2],
    pub theta0: f64,
    /// Additive bubble on the initial temperature.
    pub theta0_amplitude: f64,
    /// Width of the Gaussian mollifier applied to `Δy0`; zero disables it.
    pub mollify_width: f64,
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            y0_amplitude: [0.0, 0.0],
            y0_mode: [1, 1],
            v0_amplitude: [0.0, 0.0],
            v0_mode: [1, 1],
            theta0: 1.0,
            theta0_amplitude: 0.0,
            mollify_width: 0.0,
        }
    }
}

impl InitialSpec {
    pub fn y0(&self, grid: &Grid2D) -> VectorField {
        let [mx, my] = self.y0_mode;
        let a = Vector2::new(self.y0_amplitude[0], self.y0_amplitude[1]);
        VectorField::from_fn(grid, |x, y| Vector2::new(x, y) + a * bubble(x, y, mx, my))
    }

    pub fn v0(&self, grid: &Grid2D) -> VectorField {
        let [mx, my] = self.v0_mode;
        let b = Vector2::new(self.v0_amplitude[0], self.v0_amplitude[1]);
        VectorField::from_fn(grid, |x, y| b * bubble(x, y, mx, my))
    }

    pub fn theta0(&self, grid: &Grid2D) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| self.theta0 + self.theta0_amplitude * bubble(x, y, 1, 1))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 >= 0.0) || !(self.theta0 - self.theta0_amplitude.abs() >= 0.0) {
            return Err(Error::Config("initial temperature must be nonnegative".into()));
        }
        if !(self.mollify_width >= 0.0) {
            return Err(Error::Config("mollify_width must be nonnegative".into()));
        }
        if self.y0_mode.contains(&0) || self.v0_mode.contains(&0) {
            return Err(Error::Config("modes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub t_final: f64,
    pub tau: f64,
    pub h: f64,
    pub eps: f64,
    pub rho: f64,
    pub kappa: f64,
    pub n: usize,
    pub material: MaterialParams,
    pub initial: InitialSpec,
    pub forcing: ForcingSpec,
    /// Field snapshot cadence in steps; zero writes only the final state.
    pub snapshot_every: usize,
}

impl Default for SchemeConfig {
    /// The reference scenario.
    fn default() -> Self {
        Self {
            t_final: 0.1,
            tau: 1.0 / 320.0,
            h: 1.0 / 40.0,
            eps: 1e-3,
            rho: 1.0,
            kappa: 1.0,
            n: 16,
            material: MaterialParams::default(),
            initial: InitialSpec::default(),
            forcing: ForcingSpec {
                shape: ForceShape::Gaussian {
                    amplitude: [0.0, -REFERENCE_FORCE],
                    center: [0.5, 0.5],
                    width: 0.15,
                },
                ..ForcingSpec::default()
            },
            snapshot_every: 8,
        }
    }
}

/// Peak magnitude of the downward load in the reference scenario.
pub const REFERENCE_FORCE: f64 = 50.0;

fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let k = r.round();
    if k >= 1.0 && (r - k).abs() <= 1e-9 * k {
        Some(k as usize)
    } else {
        None
    }
}

impl SchemeConfig {
    /// Equilibrium: identity at rest, uniform temperature, no load.
    pub fn equilibrium() -> Self {
        Self {
            forcing: ForcingSpec::default(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("T", self.t_final), ("tau", self.tau), ("h", self.h)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.tau < self.h) {
            return Err(Error::Config(format!("tau = {} must be smaller than h = {}", self.tau, self.h)));
        }
        if integer_ratio(self.t_final, self.h).is_none() {
            return Err(Error::Config(format!(
                "T/h = {} is not a positive integer",
                self.t_final / self.h
            )));
        }
        if integer_ratio(self.h, self.tau).is_none() {
            return Err(Error::Config(format!(
                "h/tau = {} is not a positive integer",
                self.h / self.tau
            )));
        }
        if !(self.eps >= 0.0) || !(self.rho > 0.0) || !(self.kappa >= 0.0) {
            return Err(Error::Config("need eps >= 0, rho > 0, kappa >= 0".into()));
        }
        if self.n < 3 {
            return Err(Error::Config(format!("grid size n = {} below 3", self.n)));
        }
        self.material.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.initial.validate()?;
        self.forcing.validate()?;
        let b0 = self.forcing.theta_b;
        if !(b0[0] >= 0.0) || (0..=8).any(|i| self.forcing.theta_b_at(self.t_final * i as f64 / 8.0) < 0.0) {
            return Err(Error::Config("external temperature must be nonnegative".into()));
        }
        Ok(())
    }

    /// `T/τ`.
    pub fn steps(&self) -> usize {
        integer_ratio(self.t_final, self.tau).unwrap_or(0)
    }

    /// `h/τ`.
    pub fn delay_steps(&self) -> usize {
        integer_ratio(self.h, self.tau).unwrap_or(0)
    }
}

/// Dense Dirichlet 5-point Laplacian on the interior unknowns.
fn dirichlet_laplacian(grid: &Grid2D) -> DMatrix<f64> {
    let m = grid.interior().len();
    let mut a = DMatrix::zeros(m, m);
    for s in 0..m {
        for (node, w) in grid.laplacian_stencil(s) {
            if let Some(t) = grid.interior_slot(node) {
                a[(s, t)] += w;
            }
        }
    }
    a
}

/// Smooth the discrete Laplacian of `y0` with a Gaussian of the given width
/// and recover the deformation from the Dirichlet Poisson problem with the
/// boundary values of `y0`.
pub fn regularize_initial_data(grid: &Grid2D, y0: &VectorField, width: f64) -> Result<VectorField> {
    y0.check(grid)?;
    if !(width >= 0.0) {
        return Err(Error::InvalidParameter(format!("mollification width {width}")));
    }
    let interior = grid.interior();
    let lap = grid::laplacian_nodes(grid, y0)?;
    let smoothed: Vec<Vector2<f64>> = if width == 0.0 {
        lap
    } else {
        interior
            .iter()
            .map(|&a| {
                let (xa, ya) = grid.coords(a);
                let mut acc = Vector2::zeros();
                let mut mass = 0.0;
                for (t, &b) in interior.iter().enumerate() {
                    let (xb, yb) = grid.coords(b);
                    let r2 = (xa - xb).powi(2) + (ya - yb).powi(2);
                    if r2 > 16.0 * width * width {
                        continue;
                    }
                    let k = (-r2 / (2.0 * width * width)).exp();
                    acc += lap[t] * k;
                    mass += k;
                }
                acc / mass
            })
            .collect()
    };
    let a = dirichlet_laplacian(grid);
    let neg = -a;
    let chol = neg
        .cholesky()
        .ok_or_else(|| Error::Internal("Dirichlet Laplacian is singular".into()))?;
    let mut out = y0.clone();
    for r in 0..2 {
        // Move the known boundary values to the right-hand side.
        let mut rhs = DVector::zeros(interior.len());
        for s in 0..interior.len() {
            let mut b = smoothed[s][r];
            for (node, w) in grid.laplacian_stencil(s) {
                if grid.interior_slot(node).is_none() {
                    b -= w * y0.0[node][r];
                }
            }
            rhs[s] = -b;
        }
        let u = chol.solve(&rhs);
        for (s, &idx) in interior.iter().enumerate() {
            out.0[idx][r] = u[s];
        }
    }
    Ok(out)
}

/// Discrete `W^{2,p}` norm of `a - b`: nodal values, cell gradients and interior Laplacians.
pub fn w2p_distance(grid: &Grid2D, a: &VectorField, b: &VectorField, p: f64) -> Result<f64> {
    let d = VectorField(a.0.iter().zip(&b.0).map(|(x, y)| x - y).collect());
    let nodes: Vec<f64> = d.0.iter().map(|v| v.norm().powf(p)).collect();
    let grads: Vec<f64> = grid::grad_cells(grid, &d)?.iter().map(|g| g.norm().powf(p)).collect();
    let laps: f64 = grid::laplacian_nodes(grid, &d)?.iter().map(|v| v.norm().powf(p)).sum();
    let total = grid::integrate_nodes(grid, &nodes) + grid::integrate_cells(grid, &grads) + laps * grid.patch_weight();
    Ok(total.powf(1.0 / p))
}

/// Stored run: states for `k = 0..=T/τ`; the ramp at negative times is
/// implicit through `y0'`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub config: SchemeConfig,
    pub grid: Grid2D,
    pub y: Vec<VectorField>,
    pub theta: Vec<ScalarField>,
    pub w: Vec<ScalarField>,
    pub v0: VectorField,
    /// Index `k - 1` holds step `k`.
    pub mech_reports: Vec<SolveReport>,
    pub thermal_reports: Vec<ThermalSolveReport>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.y.len() - 1
    }

    pub fn tau(&self) -> f64 {
        self.config.tau
    }

    /// Ramp state `y^(k)` for `-h/τ <= k <= 0` and stored states after.
    pub fn state(&self, k: i64) -> VectorField {
        if k >= 0 {
            self.y[k as usize].clone()
        } else {
            self.y[0].axpy(k as f64 * self.config.tau, &self.v0)
        }
    }

    /// `δ_τ y^(l)`; constant `y0'` on the ramp.
    pub fn velocity(&self, l: i64) -> VectorField {
        if l <= 0 {
            self.v0.clone()
        } else {
            let l = l as usize;
            self.y[l].difference_quotient(&self.y[l - 1], self.config.tau)
        }
    }

    fn interval(&self, t: f64) -> usize {
        let k = (t / self.config.tau - 1e-9).ceil().max(1.0) as usize;
        k.min(self.steps())
    }

    /// Right-continuous piecewise-constant interpolant `ȳ_τ`.
    pub fn y_bar(&self, t: f64) -> VectorField {
        if t <= 0.0 {
            return self.y[0].clone();
        }
        self.y[self.interval(t)].clone()
    }

    /// Left piecewise-constant interpolant `y̲_τ`.
    pub fn y_under(&self, t: f64) -> VectorField {
        if t <= 0.0 {
            return self.y[0].clone();
        }
        self.y[self.interval(t) - 1].clone()
    }

    /// Piecewise-affine interpolant `ŷ_τ`.
    pub fn y_hat(&self, t: f64) -> VectorField {
        if t <= 0.0 {
            return self.y[0].clone();
        }
        let k = self.interval(t);
        let s = ((t - (k as f64 - 1.0) * self.config.tau) / self.config.tau).clamp(0.0, 1.0);
        self.y[k - 1].axpy(s, &self.y[k].axpy(-1.0, &self.y[k - 1]))
    }

    pub fn f_avg(&self, k: usize) -> VectorField {
        time_average_force(&self.config.forcing, &self.grid, k, self.config.tau)
    }

    pub fn theta_b_avg(&self, k: usize) -> ScalarField {
        ScalarField::constant(&self.grid, time_average_theta_b(&self.config.forcing, k, self.config.tau))
    }

    /// Increment of step `k` over the interior dofs as returned by the
    /// solver; falls back to `y^k - y^(k-1)`.
    pub fn increment(&self, k: usize) -> DVector<f64> {
        let m = 2 * self.grid.interior().len();
        match self.mech_reports.get(k - 1) {
            Some(r) if r.increment.len() == m => DVector::from_column_slice(&r.increment),
            _ => {
                let d = self.y[k].axpy(-1.0, &self.y[k - 1]);
                DVector::from_fn(m, |i, _| d.0[self.grid.interior()[i / 2]][i % 2])
            }
        }
    }

    pub fn mech_input(&self, k: usize) -> MechStepInput {
        let c = &self.config;
        MechStepInput {
            y_prev: self.y[k - 1].clone(),
            theta_prev: self.theta[k - 1].clone(),
            delayed_velocity: self.velocity(k as i64 - c.delay_steps() as i64),
            f_avg: self.f_avg(k),
            tau: c.tau,
            h: c.h,
            eps: c.eps,
            rho: c.rho,
        }
    }

    pub fn thermal_input(&self, k: usize) -> Result<ThermalStepInput> {
        let c = &self.config;
        ThermalStepInput::from_mechanics(
            &self.grid,
            &c.material,
            &self.y[k],
            &self.y[k - 1],
            &self.theta[k - 1],
            &self.theta_b_avg(k),
            c.tau,
            c.eps,
            c.kappa,
        )
    }
}

/// Build the grid, regularized initial data and the `k = 0` state.
pub fn initial_trajectory(config: &SchemeConfig) -> Result<Trajectory> {
    config.validate()?;
    let grid = Grid2D::new(config.n)?;
    let y0 = regularize_initial_data(&grid, &config.initial.y0(&grid), config.initial.mollify_width)?;
    let v0 = config.initial.v0(&grid);
    for k in 0..=config.delay_steps() {
        let ramp = y0.axpy(-(k as f64) * config.tau, &v0);
        let det = grid::min_det(&grid, &ramp)?;
        if !(det > 0.0) {
            return Err(Error::Config(format!("initial ramp folds over (min det {det:e})")));
        }
    }
    let theta0 = config.initial.theta0(&grid);
    let w0 = thermal::nodal_internal_energy(&grid, &config.material, &y0, &theta0)?;
    Ok(Trajectory {
        config: config.clone(),
        grid,
        y: vec![y0],
        theta: vec![theta0],
        w: vec![w0],
        v0,
        mech_reports: Vec::new(),
        thermal_reports: Vec::new(),
    })
}

/// Advance the trajectory by one mechanical and one thermal step.
pub fn advance(traj: &mut Trajectory, settings: &NewtonSettings) -> Result<()> {
    let k = traj.steps() + 1;
    let mat = traj.config.material.clone();
    let grid = traj.grid.clone();
    let mi = traj.mech_input(k);
    let (y, mrep) = mechanics::solve_mech_step(&grid, &mat, &mi, None, settings).map_err(|e| e.at_step(k))?;
    traj.y.push(y);
    let ti = match traj.thermal_input(k) {
        Ok(t) => t,
        Err(e) => {
            traj.y.pop();
            return Err(e.at_step(k));
        }
    };
    let solved = thermal::solve_thermal_step(&grid, &mat, &ti, None)
        .and_then(|(theta, trep)| Ok((thermal::nodal_internal_energy(&grid, &mat, &ti.y_new, &theta)?, theta, trep)));
    match solved {
        Ok((w, theta, trep)) => {
            traj.theta.push(theta);
            traj.w.push(w);
            traj.mech_reports.push(mrep);
            traj.thermal_reports.push(trep);
            Ok(())
        }
        Err(e) => {
            traj.y.pop();
            Err(e.at_step(k))
        }
    }
}

/// Run the full scheme.
pub fn run_trajectory(config: &SchemeConfig) -> Result<Trajectory> {
    let mut traj = initial_trajectory(config)?;
    let settings = NewtonSettings::default();
    for _ in 0..config.steps() {
        advance(&mut traj, &settings)?;
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility() {
        let mut c = SchemeConfig {
            t_final: 1.0,
            h: 0.5,
            tau: 0.125,
            ..SchemeConfig::equilibrium()
        };
        assert!(c.validate().is_ok());
        assert_eq!(c.steps(), 8);
        assert_eq!(c.delay_steps(), 4);
        c.tau = 0.3;
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("h/tau"));
        c.tau = 0.5;
        assert!(c.validate().is_err());
        assert!(SchemeConfig::default().validate().is_ok());
    }

    #[test]
    fn gauss_time_averages() {
        let g = Grid2D::new(3).unwrap();
        let tau = 0.1;
        let mut spec = ForcingSpec {
            shape: ForceShape::Uniform { value: [1.0, 0.0] },
            time_coeffs: [2.0, 0.0, 0.0],
            ..ForcingSpec::default()
        };
        assert_eq!(time_average_force(&spec, &g, 3, tau).0[4], Vector2::new(2.0, 0.0));
        spec.time_coeffs = [0.0, 1.0, 0.0];
        let f = time_average_force(&spec, &g, 3, tau);
        assert!((f.0[4][0] - 2.5 * tau).abs() < 1e-15);
        spec.time_coeffs = [0.0, 0.0, 1.0];
        let f = time_average_force(&spec, &g, 3, tau);
        let exact = (27.0 - 8.0) * tau * tau / 3.0;
        assert!((f.0[4][0] - exact).abs() < 1e-15);
    }

    #[test]
    fn regularization_examples() {
        let g = Grid2D::new(12).unwrap();
        let id = VectorField::identity(&g);
        let r = regularize_initial_data(&g, &id, 0.1).unwrap();
        assert!(r.0.iter().zip(&id.0).all(|(a, b)| (a - b).norm() < 1e-13));

        let y0 = VectorField::from_fn(&g, |x, y| Vector2::new(x + 0.05 * bubble(x, y, 2, 1), y + 0.03 * bubble(x, y, 1, 1)));
        let exact = regularize_initial_data(&g, &y0, 0.0).unwrap();
        assert!(exact.0.iter().zip(&y0.0).all(|(a, b)| (a - b).norm() < 1e-12));

        let coarse = regularize_initial_data(&g, &y0, 2.0 * g.dx()).unwrap();
        let fine = regularize_initial_data(&g, &y0, g.dx()).unwrap();
        let dc = w2p_distance(&g, &coarse, &y0, 4.0).unwrap();
        let df = w2p_distance(&g, &fine, &y0, 4.0).unwrap();
        assert!(df < dc, "{df} vs {dc}");
    }

    #[test]
    fn interpolants_agree_at_nodes() {
        let c = SchemeConfig {
            t_final: 0.05,
            h: 0.025,
            tau: 0.025 / 4.0,
            n: 5,
            initial: InitialSpec {
                v0_amplitude: [0.1, 0.0],
                ..InitialSpec::default()
            },
            forcing: ForcingSpec::default(),
            ..SchemeConfig::default()
        };
        let traj = run_trajectory(&c).unwrap();
        let tau = c.tau;
        for k in 1..=traj.steps() {
            let t = k as f64 * tau;
            assert_eq!(traj.y_bar(t), traj.y[k]);
            assert_eq!(traj.y_hat(t), traj.y[k]);
            let mid = t - 0.5 * tau;
            assert_eq!(traj.y_bar(mid), traj.y[k]);
            assert_eq!(traj.y_under(mid), traj.y[k - 1]);
            let rate = traj.y_hat(mid + 0.25 * tau).axpy(-1.0, &traj.y_hat(mid - 0.25 * tau));
            let v = traj.velocity(k as i64);
            assert!(rate.0.iter().zip(&v.0).all(|(a, b)| (a / (0.5 * tau) - b).norm() < 1e-9));
        }
        assert_eq!(traj.state(-2), traj.y[0].axpy(-2.0 * tau, &traj.v0));
    }

    #[test]
    fn equilibrium_run_is_stationary() {
        let c = SchemeConfig {
            t_final: 0.05,
            ..SchemeConfig::equilibrium()
        };
        let traj = run_trajectory(&c).unwrap();
        for k in 0..=traj.steps() {
            assert_eq!(traj.y[k], traj.y[0]);
            assert_eq!(traj.theta[k], traj.theta[0]);
        }
    }
}
