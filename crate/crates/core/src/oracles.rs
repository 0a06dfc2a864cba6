//! Brute-force and property oracles for the constitutive model and the
//! assembled step functionals.
//!
//! Derivative checks compare against central differences of the energy
//! evaluations only, so a wrong analytic derivative cannot hide behind a
//! shared code path. Every sample draws from its own RNG stream derived from
//! the master seed, which keeps reports identical regardless of thread count.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, Vector2, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, Grid2D, ScalarField, VectorField};
use crate::material::{flatten, strain_rate, unflatten, MaterialParams};
use crate::mechanics::{MechStepInput, MechanicalProblem};
use crate::thermal::{ThermalProblem, ThermalStepInput};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-6;
pub const FD_SAMPLES: usize = 200;
pub const SYMMETRY_SAMPLES: usize = 1000;
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_SEED: u64 = 20_240_917;

/// Outcome of one oracle check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub samples: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub seed: u64,
    /// Inputs and both compared values at the worst sample.
    pub worst_case: String,
}

impl OracleReport {
    fn from_samples(name: &str, seed: u64, tolerance: f64, samples: Vec<(f64, String)>) -> Self {
        let n = samples.len();
        let mut max_error = 0.0f64;
        let mut worst_case = String::new();
        for (err, detail) in samples {
            let err = if err.is_nan() { f64::INFINITY } else { err };
            if err > max_error || worst_case.is_empty() {
                max_error = max_error.max(err);
                worst_case = detail;
            }
        }
        Self {
            name: name.to_string(),
            samples: n,
            max_error,
            tolerance,
            pass: max_error <= tolerance,
            seed,
            worst_case,
        }
    }
}

/// Constitutive evaluations the oracles look at.
///
/// Every method defaults to the material model; fixtures override single
/// methods to check that a broken derivative is caught.
pub trait Constitutive: Sync {
    fn params(&self) -> &MaterialParams;

    fn elastic_energy(&self, f: &Matrix2<f64>) -> Result<f64> {
        self.params().elastic_energy(f)
    }
    fn elastic_stress(&self, f: &Matrix2<f64>) -> Result<Matrix2<f64>> {
        self.params().elastic_stress(f)
    }
    fn elastic_tangent(&self, f: &Matrix2<f64>) -> Result<Matrix4<f64>> {
        self.params().elastic_tangent(f)
    }
    fn coupling_energy(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        self.params().coupling_energy(f, theta)
    }
    fn coupling_stress(&self, f: &Matrix2<f64>, theta: f64) -> Result<Matrix2<f64>> {
        self.params().coupling_stress(f, theta)
    }
    fn coupling_tangent(&self, f: &Matrix2<f64>, theta: f64) -> Result<Matrix4<f64>> {
        self.params().coupling_tangent(f, theta)
    }
    fn coupling_dtheta(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        self.params().coupling_dtheta(f, theta)
    }
    fn coupling_d2_theta(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        self.params().coupling_d2_theta(f, theta)
    }
    fn coupling_d2_f_theta(&self, f: &Matrix2<f64>, theta: f64) -> Result<Matrix2<f64>> {
        self.params().coupling_d2_f_theta(f, theta)
    }
    fn strain_gradient_energy(&self, v: &Vector2<f64>) -> f64 {
        self.params().strain_gradient_energy(v)
    }
    fn strain_gradient_force(&self, v: &Vector2<f64>) -> Vector2<f64> {
        self.params().strain_gradient_force(v)
    }
    fn strain_gradient_hessian(&self, v: &Vector2<f64>) -> Matrix2<f64> {
        self.params().strain_gradient_hessian(v)
    }
    fn dissipation_potential(&self, f: &Matrix2<f64>, fdot: &Matrix2<f64>, theta: f64) -> f64 {
        self.params().dissipation_potential(f, fdot, theta)
    }
    fn viscous_stress(&self, f: &Matrix2<f64>, fdot: &Matrix2<f64>, theta: f64) -> Matrix2<f64> {
        self.params().viscous_stress(f, fdot, theta)
    }
    fn viscous_tangent(&self, f: &Matrix2<f64>, theta: f64) -> Matrix4<f64> {
        self.params().viscous_tangent(f, theta)
    }
    fn dissipation_rate(&self, f: &Matrix2<f64>, fdot: &Matrix2<f64>, theta: f64) -> f64 {
        self.params().dissipation_rate(f, fdot, theta)
    }
    fn internal_energy(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        self.params().internal_energy(f, theta)
    }
    fn heat_capacity(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        self.params().heat_capacity(f, theta)
    }
    fn internal_energy_primitive(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        self.params().internal_energy_primitive(f, theta)
    }
}

impl Constitutive for MaterialParams {
    fn params(&self) -> &MaterialParams {
        self
    }
}

// ------------------------------------------------------------------ sampling

fn mix(seed: u64, name: &str, index: usize) -> u64 {
    // FNV-1a over the check name, folded with the seed and sample index.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes().chain(seed.to_le_bytes()).chain((index as u64).to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn sample_rng(seed: u64, name: &str, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, name, index))
}

fn run_check<F>(name: &str, seed: u64, samples: usize, tolerance: f64, sample: F) -> OracleReport
where
    F: Fn(&mut ChaCha8Rng) -> Result<(f64, String)> + Sync,
{
    let results: Vec<(f64, String)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, name, i);
            sample(&mut rng).unwrap_or_else(|e| (f64::INFINITY, format!("sample {i}: {e}")))
        })
        .collect();
    OracleReport::from_samples(name, seed, tolerance, results)
}

/// Deformation gradient near the identity with `det F >= 0.2`.
pub fn random_gradient(rng: &mut impl Rng) -> Matrix2<f64> {
    loop {
        let f = Matrix2::identity() + Matrix2::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        if f.determinant() >= 0.2 {
            return f;
        }
    }
}

fn random_matrix(rng: &mut impl Rng, amp: f64) -> Matrix2<f64> {
    Matrix2::from_fn(|_, _| rng.gen_range(-amp..amp))
}

fn random_theta(rng: &mut impl Rng) -> f64 {
    rng.gen_range(0.05..3.0)
}

/// Uniformly random rotation: QR of a Gaussian matrix, sign-corrected so that
/// `det Q = 1`.
pub fn random_rotation(rng: &mut impl Rng) -> Matrix2<f64> {
    let g = Matrix2::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..2 {
        if r[(j, j)] < 0.0 {
            let c = -q.column(j);
            q.set_column(j, &c);
        }
    }
    if q.determinant() < 0.0 {
        let c = -q.column(1);
        q.set_column(1, &c);
    }
    q
}

// ------------------------------------------------------ finite differences

fn central(f: impl Fn(f64) -> Result<f64>, x: f64) -> Result<f64> {
    Ok((f(x + FD_STEP)? - f(x - FD_STEP)?) / (2.0 * FD_STEP))
}

fn fd_matrix_gradient(f: impl Fn(&Matrix2<f64>) -> Result<f64>, at: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    let mut g = Matrix2::zeros();
    for i in 0..2 {
        for j in 0..2 {
            g[(i, j)] = central(
                |s| {
                    let mut m = *at;
                    m[(i, j)] += s;
                    f(&m)
                },
                0.0,
            )?;
        }
    }
    Ok(g)
}

/// Columns are derivatives with respect to the flattened entries of the argument.
fn fd_matrix_jacobian(f: impl Fn(&Matrix2<f64>) -> Result<Matrix2<f64>>, at: &Matrix2<f64>) -> Result<Matrix4<f64>> {
    let base = flatten(at);
    let mut jac = Matrix4::zeros();
    for j in 0..4 {
        let mut e = Vector4::zeros();
        e[j] = FD_STEP;
        let plus = flatten(&f(&unflatten(&(base + e)))?);
        let minus = flatten(&f(&unflatten(&(base - e)))?);
        jac.set_column(j, &((plus - minus) / (2.0 * FD_STEP)));
    }
    Ok(jac)
}

fn fd_vector_gradient(f: impl Fn(&Vector2<f64>) -> f64, at: &Vector2<f64>) -> Vector2<f64> {
    Vector2::from_fn(|i, _| {
        let mut p = *at;
        let mut m = *at;
        p[i] += FD_STEP;
        m[i] -= FD_STEP;
        (f(&p) - f(&m)) / (2.0 * FD_STEP)
    })
}

fn fd_vector_jacobian(f: impl Fn(&Vector2<f64>) -> Vector2<f64>, at: &Vector2<f64>) -> Matrix2<f64> {
    let mut jac = Matrix2::zeros();
    for j in 0..2 {
        let mut p = *at;
        let mut m = *at;
        p[j] += FD_STEP;
        m[j] -= FD_STEP;
        jac.set_column(j, &((f(&p) - f(&m)) / (2.0 * FD_STEP)));
    }
    jac
}

fn fd_dofs_gradient(f: impl Fn(&DVector<f64>) -> Result<f64>, at: &DVector<f64>) -> Result<DVector<f64>> {
    let mut g = DVector::zeros(at.len());
    for i in 0..at.len() {
        let mut p = at.clone();
        let mut m = at.clone();
        p[i] += FD_STEP;
        m[i] -= FD_STEP;
        g[i] = (f(&p)? - f(&m)?) / (2.0 * FD_STEP);
    }
    Ok(g)
}

fn fd_dofs_jacobian(f: impl Fn(&DVector<f64>) -> Result<DVector<f64>>, at: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = at.len();
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut p = at.clone();
        let mut m = at.clone();
        p[j] += FD_STEP;
        m[j] -= FD_STEP;
        let col = (f(&p)? - f(&m)?) / (2.0 * FD_STEP);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn relative_norm_error(diff: f64, a: f64, b: f64) -> f64 {
    let scale = a.max(b);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn rel_mat2(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    relative_norm_error((a - b).norm(), a.norm(), b.norm())
}

fn rel_mat4(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
    relative_norm_error((a - b).norm(), a.norm(), b.norm())
}

fn rel_vec2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    relative_norm_error((a - b).norm(), a.norm(), b.norm())
}

// ------------------------------------------------------ derivative anchoring

/// Central-difference checks of every analytic derivative of the model and
/// of both assembled step functionals.
pub fn fd_gradient_suite(model: &dyn Constitutive, seed: u64) -> Vec<OracleReport> {
    let tol = FD_TOLERANCE;
    let n = FD_SAMPLES;
    let mut out = Vec::new();

    out.push(run_check("grad_Wel", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let a = model.elastic_stress(&f)?;
        let b = fd_matrix_gradient(|m| model.elastic_energy(m), &f)?;
        Ok((rel_mat2(&a, &b), format!("F={f:?} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("hess_Wel", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let a = model.elastic_tangent(&f)?;
        let b = fd_matrix_jacobian(|m| model.elastic_stress(m), &f)?;
        Ok((rel_mat4(&a, &b), format!("F={f:?} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("dF_Wcpl", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let a = model.coupling_stress(&f, th)?;
        let b = fd_matrix_gradient(|m| model.coupling_energy(m, th), &f)?;
        Ok((rel_mat2(&a, &b), format!("F={f:?} theta={th} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("dFF_Wcpl", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let a = model.coupling_tangent(&f, th)?;
        let b = fd_matrix_jacobian(|m| model.coupling_stress(m, th), &f)?;
        Ok((rel_mat4(&a, &b), format!("F={f:?} theta={th} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("dtheta_Wcpl", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let a = model.coupling_dtheta(&f, th)?;
        let b = central(|s| model.coupling_energy(&f, th + s), 0.0)?;
        Ok((relative_error(a, b), format!("F={f:?} theta={th} analytic={a:e} fd={b:e}")))
    }));
    out.push(run_check("dthetatheta_Wcpl", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let a = model.coupling_d2_theta(&f, th)?;
        let b = central(|s| model.coupling_dtheta(&f, th + s), 0.0)?;
        Ok((relative_error(a, b), format!("F={f:?} theta={th} analytic={a:e} fd={b:e}")))
    }));
    out.push(run_check("dFtheta_Wcpl", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let a = model.coupling_d2_f_theta(&f, th)?;
        let mut b = Matrix2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                b[(i, j)] = central(|s| Ok(model.coupling_stress(&f, th + s)?[(i, j)]), 0.0)?;
            }
        }
        Ok((rel_mat2(&a, &b), format!("F={f:?} theta={th} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("DH", seed, n, tol, |rng| {
        let v = Vector2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let a = model.strain_gradient_force(&v);
        let b = fd_vector_gradient(|w| model.strain_gradient_energy(w), &v);
        Ok((rel_vec2(&a, &b), format!("v={v:?} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("D2H", seed, n, tol, |rng| {
        let v = Vector2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        let a = model.strain_gradient_hessian(&v);
        let b = fd_vector_jacobian(|w| model.strain_gradient_force(w), &v);
        Ok((rel_mat2(&a, &b), format!("v={v:?} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("dR_dFdot", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let fdot = random_matrix(rng, 1.0);
        let th = random_theta(rng);
        let a = model.viscous_stress(&f, &fdot, th);
        let b = fd_matrix_gradient(|m| Ok(model.dissipation_potential(&f, m, th)), &fdot)?;
        Ok((rel_mat2(&a, &b), format!("F={f:?} Fdot={fdot:?} theta={th} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("d2R_dFdot2", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let fdot = random_matrix(rng, 1.0);
        let th = random_theta(rng);
        let a = model.viscous_tangent(&f, th);
        let b = fd_matrix_jacobian(|m| Ok(model.viscous_stress(&f, m, th)), &fdot)?;
        Ok((rel_mat4(&a, &b), format!("F={f:?} Fdot={fdot:?} theta={th} analytic={a:?} fd={b:?}")))
    }));
    out.push(run_check("dtheta_Win", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let a = model.heat_capacity(&f, th)?;
        let b = central(|s| model.internal_energy(&f, th + s), 0.0)?;
        Ok((relative_error(a, b), format!("F={f:?} theta={th} analytic={a:e} fd={b:e}")))
    }));
    out.push(run_check("dtheta_Win_primitive", seed, n, tol, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let a = model.internal_energy(&f, th)?;
        let b = central(|s| model.internal_energy_primitive(&f, th + s), 0.0)?;
        Ok((relative_error(a, b), format!("F={f:?} theta={th} analytic={a:e} fd={b:e}")))
    }));

    let params = model.params();
    out.push(run_check("grad_mech_functional", seed, n, tol, |rng| {
        let grid = Grid2D::new(4)?;
        let input = random_mech_input(&grid, rng, 0.15);
        let problem = MechanicalProblem::new(&grid, params, &input)?;
        let u = random_increment(&grid, rng, 0.1);
        let (_, asm) = problem.assemble_increment(&u, true, false)?;
        let fd = fd_dofs_gradient(|x| Ok(problem.assemble_increment(x, false, false)?.1.terms.total()), &u)?;
        let err = relative_norm_error((&asm.gradient - &fd).norm(), asm.gradient.norm(), fd.norm());
        Ok((err, format!("u={:?} analytic={:?} fd={:?}", u.as_slice(), asm.gradient.as_slice(), fd.as_slice())))
    }));
    out.push(run_check("hess_mech_functional", seed, n, tol, |rng| {
        let grid = Grid2D::new(4)?;
        let input = random_mech_input(&grid, rng, 0.15);
        let problem = MechanicalProblem::new(&grid, params, &input)?;
        let u = random_increment(&grid, rng, 0.1);
        let (_, asm) = problem.assemble_increment(&u, true, true)?;
        let hess = asm.hessian.ok_or_else(|| Error::Internal("hessian missing".into()))?;
        let fd = fd_dofs_jacobian(|x| Ok(problem.assemble_increment(x, true, false)?.1.gradient), &u)?;
        let err = relative_norm_error((&hess - &fd).norm(), hess.norm(), fd.norm());
        Ok((err, format!("u={:?} analytic_norm={:e} fd_norm={:e}", u.as_slice(), hess.norm(), fd.norm())))
    }));
    out.push(run_check("grad_thermal_functional", seed, n, tol, |rng| {
        let grid = Grid2D::new(4)?;
        let input = random_thermal_input(&grid, params, rng)?;
        let problem = ThermalProblem::new(&grid, params, &input)?;
        let theta = random_positive_field(&grid, rng);
        let g = problem.gradient(&theta)?;
        let th0 = DVector::from_column_slice(&theta.0);
        let fd = fd_dofs_gradient(|x| problem.functional(&ScalarField(x.as_slice().to_vec())), &th0)?;
        let err = relative_norm_error((&g - &fd).norm(), g.norm(), fd.norm());
        Ok((err, format!("theta={:?} analytic={:?} fd={:?}", theta.0, g.as_slice(), fd.as_slice())))
    }));
    out.push(run_check("hess_thermal_functional", seed, n, tol, |rng| {
        let grid = Grid2D::new(4)?;
        let input = random_thermal_input(&grid, params, rng)?;
        let problem = ThermalProblem::new(&grid, params, &input)?;
        let theta = random_positive_field(&grid, rng);
        let h = problem.hessian(&theta)?;
        let th0 = DVector::from_column_slice(&theta.0);
        let fd = fd_dofs_jacobian(|x| problem.gradient(&ScalarField(x.as_slice().to_vec())), &th0)?;
        let err = relative_norm_error((&h - &fd).norm(), h.norm(), fd.norm());
        Ok((err, format!("theta={:?} analytic_norm={:e} fd_norm={:e}", theta.0, h.norm(), fd.norm())))
    }));
    out
}

/// Random admissible deformation: identity plus interior perturbations of
/// amplitude `amp * dx`, rejection-sampled for positive cell determinants.
pub fn random_deformation(grid: &Grid2D, rng: &mut impl Rng, amp: f64) -> VectorField {
    let dx = grid.dx();
    loop {
        let mut y = VectorField::identity(grid);
        for &i in grid.interior() {
            y.0[i] += Vector2::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)) * dx;
        }
        if matches!(grid::min_det(grid, &y), Ok(d) if d > 0.2) {
            return y;
        }
    }
}

fn random_increment(grid: &Grid2D, rng: &mut impl Rng, amp: f64) -> DVector<f64> {
    let dx = grid.dx();
    DVector::from_fn(2 * grid.interior().len(), |_, _| rng.gen_range(-amp..amp) * dx)
}

fn random_positive_field(grid: &Grid2D, rng: &mut impl Rng) -> ScalarField {
    ScalarField((0..grid.num_nodes()).map(|_| rng.gen_range(0.3..2.5)).collect())
}

/// Random step input with an admissible `y_prev`.
pub fn random_mech_input(grid: &Grid2D, rng: &mut impl Rng, amp: f64) -> MechStepInput {
    let y_prev = random_deformation(grid, rng, amp);
    let nodes = grid.num_nodes();
    let theta_prev = ScalarField((0..nodes).map(|_| rng.gen_range(0.2..2.0)).collect());
    let rand_vec = |rng: &mut dyn rand::RngCore, a: f64| {
        VectorField(
            (0..nodes)
                .map(|_| Vector2::new(rng.gen_range(-a..a), rng.gen_range(-a..a)))
                .collect(),
        )
    };
    let delayed_velocity = rand_vec(rng, 1.0);
    let f_avg = rand_vec(rng, 5.0);
    MechStepInput {
        y_prev,
        theta_prev,
        delayed_velocity,
        f_avg,
        tau: rng.gen_range(0.005..0.02),
        h: 0.05,
        eps: rng.gen_range(1e-4..1e-2),
        rho: rng.gen_range(0.5..2.0),
    }
}

fn random_thermal_input(grid: &Grid2D, params: &MaterialParams, rng: &mut impl Rng) -> Result<ThermalStepInput> {
    let y_prev = random_deformation(grid, rng, 0.15);
    let y_new = loop {
        let mut y = y_prev.clone();
        for &i in grid.interior() {
            y.0[i] += Vector2::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)) * grid.dx();
        }
        if matches!(grid::min_det(grid, &y), Ok(d) if d > 0.2) {
            break y;
        }
    };
    let theta_prev = random_positive_field(grid, rng);
    let theta_b = random_positive_field(grid, rng);
    ThermalStepInput::from_mechanics(
        grid,
        params,
        &y_new,
        &y_prev,
        &theta_prev,
        &theta_b,
        rng.gen_range(0.005..0.02),
        rng.gen_range(1e-4..1e-2),
        rng.gen_range(0.0..2.0),
    )
}

// ------------------------------------------------------- frame indifference

/// Rotation invariance of `W_el`, `W_cpl`, `H` and `R`, plus the exact
/// identity and quarter-turn cases.
pub fn symmetry_suite(model: &dyn Constitutive, seed: u64) -> Vec<OracleReport> {
    let mut out = Vec::new();
    let quarter = Matrix2::new(0.0, -1.0, 1.0, 0.0);
    let cases: [(&str, Option<Matrix2<f64>>, f64); 3] = [
        ("frame_random_rotation", None, SYMMETRY_TOLERANCE),
        ("frame_identity", Some(Matrix2::identity()), 0.0),
        ("frame_quarter_turn", Some(quarter), 1e-14),
    ];
    for (label, fixed, tol) in cases {
        let pick = |rng: &mut ChaCha8Rng| fixed.unwrap_or_else(|| random_rotation(rng));
        out.push(run_check(&format!("{label}_Wel"), seed, SYMMETRY_SAMPLES, tol, |rng| {
            let f = random_gradient(rng);
            let q = pick(rng);
            let a = model.elastic_energy(&f)?;
            let b = model.elastic_energy(&(q * f))?;
            Ok(((a - b).abs() / (1.0 + a.abs()), format!("F={f:?} Q={q:?} W(F)={a:e} W(QF)={b:e}")))
        }));
        out.push(run_check(&format!("{label}_Wcpl"), seed, SYMMETRY_SAMPLES, tol, |rng| {
            let f = random_gradient(rng);
            let th = random_theta(rng);
            let q = pick(rng);
            let a = model.coupling_energy(&f, th)?;
            let b = model.coupling_energy(&(q * f), th)?;
            Ok(((a - b).abs() / (1.0 + a.abs()), format!("F={f:?} theta={th} Q={q:?} W(F)={a:e} W(QF)={b:e}")))
        }));
        out.push(run_check(&format!("{label}_H"), seed, SYMMETRY_SAMPLES, tol, |rng| {
            let v = Vector2::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let q = pick(rng);
            let a = model.strain_gradient_energy(&v);
            let b = model.strain_gradient_energy(&(q * v));
            Ok(((a - b).abs() / (1.0 + a.abs()), format!("v={v:?} Q={q:?} H(v)={a:e} H(Qv)={b:e}")))
        }));
        out.push(run_check(&format!("{label}_R"), seed, SYMMETRY_SAMPLES, tol, |rng| {
            let f = random_gradient(rng);
            let fdot = random_matrix(rng, 1.0);
            let th = random_theta(rng);
            let q = pick(rng);
            let a = model.dissipation_potential(&f, &fdot, th);
            let b = model.dissipation_potential(&(q * f), &(q * fdot), th);
            Ok(((a - b).abs() / (1.0 + a.abs()), format!("F={f:?} Fdot={fdot:?} Q={q:?} R={a:e} R(Q)={b:e}")))
        }));
    }
    out
}

/// Rotation by `angle`; exact entries for multiples of a quarter turn.
pub fn rotation(angle: f64) -> Matrix2<f64> {
    let turns = angle / FRAC_PI_2;
    if (turns - turns.round()).abs() < 1e-15 {
        let (c, s) = match (turns.round() as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        return Matrix2::new(c, -s, s, c);
    }
    Matrix2::new(angle.cos(), -angle.sin(), angle.sin(), angle.cos())
}

// --------------------------------------------------- constitutive identities

/// `ξ = 2R`, linearity of the viscous stress in the rate, the internal
/// energy identity and the primitive/inverse round trips.
pub fn identity_suite(model: &dyn Constitutive, seed: u64) -> Vec<OracleReport> {
    let n = SYMMETRY_SAMPLES;
    let mut out = Vec::new();
    out.push(run_check("xi_equals_2R", seed, n, 1e-12, |rng| {
        let f = random_gradient(rng);
        let fdot = random_matrix(rng, 1.0);
        let th = random_theta(rng);
        let r = model.dissipation_potential(&f, &fdot, th);
        let xi = model.dissipation_rate(&f, &fdot, th);
        Ok(((xi - 2.0 * r).abs() / (1.0 + r.abs()), format!("F={f:?} Fdot={fdot:?} theta={th} xi={xi:e} 2R={:e}", 2.0 * r)))
    }));
    out.push(run_check("viscous_stress_linearity", seed, n, 1e-12, |rng| {
        let f = random_gradient(rng);
        let d1 = random_matrix(rng, 1.0);
        let d2 = random_matrix(rng, 1.0);
        let a: f64 = rng.gen_range(-2.0..2.0);
        let b: f64 = rng.gen_range(-2.0..2.0);
        let th = random_theta(rng);
        let lhs = model.viscous_stress(&f, &(d1 * a + d2 * b), th);
        let s1 = model.viscous_stress(&f, &d1, th) * a;
        let s2 = model.viscous_stress(&f, &d2, th) * b;
        let err = (lhs - s1 - s2).norm() / (1.0 + s1.norm() + s2.norm());
        Ok((err, format!("F={f:?} a={a} b={b} lhs={lhs:?} rhs={:?}", s1 + s2)))
    }));
    out.push(run_check("strain_rate_skew_free", seed, n, 1e-12, |rng| {
        let f = random_gradient(rng);
        let w = random_matrix(rng, 1.0);
        let skew = (w - w.transpose()) * 0.5;
        let fdot = skew * f;
        let cdot = strain_rate(&f, &fdot);
        Ok((cdot.norm() / (1.0 + fdot.norm()), format!("F={f:?} Fdot={fdot:?} Cdot={cdot:?}")))
    }));
    out.push(run_check("internal_energy_identity", seed, n, 1e-12, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let direct = model.internal_energy(&f, th)?;
        let via = model.coupling_energy(&f, th)? - th * model.coupling_dtheta(&f, th)?;
        Ok(((direct - via).abs() / (1.0 + direct.abs()), format!("F={f:?} theta={th} Win={direct:e} Wcpl-th*dWcpl={via:e}")))
    }));
    let params = model.params();
    out.push(run_check("internal_energy_primitive_quadrature", seed, n, 1e-10, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let closed = model.internal_energy_primitive(&f, th)?;
        let quad = params.internal_energy_primitive_quadrature(&f, th)?;
        Ok(((closed - quad).abs() / (1.0 + closed.abs()), format!("F={f:?} theta={th} closed={closed:e} quadrature={quad:e}")))
    }));
    out.push(run_check("internal_energy_inverse", seed, n, 1e-10, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let w = model.internal_energy(&f, th)?;
        let back = params.invert_internal_energy(&f, w)?;
        Ok(((back - th).abs() / (1.0 + th), format!("F={f:?} theta={th} w={w:e} inverse={back:e}")))
    }));
    out.push(run_check("h_convexity", seed, n, 1e-12, |rng| {
        let s1: f64 = rng.gen_range(0.0..2.0);
        let s2: f64 = s1 + rng.gen_range(0.0..2.0);
        let l: f64 = rng.gen_range(0.0..1.0);
        let lhs = params.h_scalar(l * s1 + (1.0 - l) * s2);
        let rhs = l * params.h_scalar(s1) + (1.0 - l) * params.h_scalar(s2);
        Ok(((lhs - rhs).max(0.0), format!("s1={s1} s2={s2} lambda={l} lhs={lhs:e} rhs={rhs:e}")))
    }));
    out.push(run_check("pullback_conductivity_symmetry", seed, n, 1e-14, |rng| {
        let f = random_gradient(rng);
        let th = random_theta(rng);
        let k = params.pullback_conductivity(&f, th)?;
        let asym = (k - k.transpose()).norm();
        let eig = k.symmetric_eigenvalues();
        let defect = if eig.min() > 0.0 { asym } else { f64::INFINITY };
        Ok((defect, format!("F={f:?} theta={th} K={k:?}")))
    }));
    out
}

// ------------------------------------------------------------ bound audits

/// Tightest constant seen for each structural bound; a report passes when
/// the constant does not exceed the configured `c0`.
pub fn bound_audit_suite(model: &dyn Constitutive, seed: u64) -> Vec<OracleReport> {
    let params = model.params().clone();
    let c0 = params.c0;
    let n = SYMMETRY_SAMPLES;
    let p = params.p;
    let q = params.q_det;
    let mut out = Vec::new();
    out.push(run_check("bound_Wel_nonnegative", seed, n, 0.0, |rng| {
        let f = wide_gradient(rng);
        let w = model.elastic_energy(&f)?;
        Ok(((-w).max(0.0), format!("F={f:?} W={w:e}")))
    }));
    out.push(run_check("bound_Wel_coercive", seed, n, c0, |rng| {
        let f = wide_gradient(rng);
        let w = model.elastic_energy(&f)?;
        let a = f.norm_squared() + f.determinant().powf(-q);
        // smallest C with W >= a / C - C
        let c = 0.5 * (-w + (w * w + 4.0 * a).sqrt());
        Ok((c, format!("F={f:?} W={w:e} |F|^2+det^-q={a:e}")))
    }));
    out.push(run_check("bound_H_lower", seed, n, 1.0, |rng| {
        let v = random_strain_gradient(rng);
        let ratio = v.norm().powf(p) / model.strain_gradient_energy(&v);
        Ok((ratio, format!("v={v:?} |v|^p/H={ratio:e}")))
    }));
    out.push(run_check("bound_H_upper", seed, n, c0, |rng| {
        let v = random_strain_gradient(rng);
        let s = v.norm();
        let ratio = model.strain_gradient_energy(&v) / s.powf(p).max(s * s);
        Ok((ratio, format!("v={v:?} H/max(|v|^2,|v|^p)={ratio:e}")))
    }));
    out.push(run_check("bound_DH_upper", seed, n, c0, |rng| {
        let v = random_strain_gradient(rng);
        let s = v.norm();
        let ratio = model.strain_gradient_force(&v).norm() / s.powf(p - 1.0).max(s);
        Ok((ratio, format!("v={v:?} |DH|/max(|v|,|v|^(p-1))={ratio:e}")))
    }));
    out.push(run_check("bound_Wcpl_dFF", seed, n, c0, |rng| {
        let f = wide_gradient(rng);
        let th = rng.gen_range(1e-3..20.0);
        let t = model.coupling_tangent(&f, th)?.norm();
        Ok((t, format!("F={f:?} theta={th} |dFF Wcpl|={t:e}")))
    }));
    out.push(run_check("bound_Wcpl_dFtheta", seed, n, c0, |rng| {
        let f = wide_gradient(rng);
        let th = rng.gen_range(1e-3..20.0);
        let m = model.coupling_d2_f_theta(&f, th)?.norm();
        let c = m * th.max(1.0) / (1.0 + f.norm());
        Ok((c, format!("F={f:?} theta={th} |dFtheta Wcpl|={m:e}")))
    }));
    out.push(run_check("bound_heat_capacity", seed, n, c0, |rng| {
        let f = wide_gradient(rng);
        let th = rng.gen_range(1e-3..20.0);
        let cv = -th * model.coupling_d2_theta(&f, th)?;
        let c = if cv > 0.0 { cv.max(1.0 / cv) } else { f64::INFINITY };
        Ok((c, format!("F={f:?} theta={th} -theta dthetatheta Wcpl={cv:e}")))
    }));
    out.push(run_check("bound_dissipation", seed, n, c0, |rng| {
        let f = wide_gradient(rng);
        let fdot = random_matrix(rng, 1.0);
        let th = rng.gen_range(0.0..20.0);
        let cdot = strain_rate(&f, &fdot);
        let ratio = 2.0 * model.dissipation_potential(&f, &fdot, th) / cdot.norm_squared();
        let c = if ratio > 0.0 { ratio.max(1.0 / ratio) } else { f64::INFINITY };
        Ok((c, format!("F={f:?} Fdot={fdot:?} theta={th} Cdot:DCdot/|Cdot|^2={ratio:e}")))
    }));
    out.push(run_check("bound_conductivity", seed, n, c0, |rng| {
        let th = rng.gen_range(0.0..50.0);
        let eig = params.conductivity(th).symmetric_eigenvalues();
        let c = eig.max().max(1.0 / eig.min());
        Ok((c, format!("theta={th} eigenvalues={eig:?}")))
    }));
    out.push(run_check("bound_internal_energy", seed, n, c0, |rng| {
        let f = wide_gradient(rng);
        let th = rng.gen_range(1e-3..20.0);
        let ratio = model.internal_energy(&f, th)? / th;
        let c = if ratio > 0.0 { ratio.max(1.0 / ratio) } else { f64::INFINITY };
        Ok((c, format!("F={f:?} theta={th} Win/theta={ratio:e}")))
    }));
    out
}

fn wide_gradient(rng: &mut impl Rng) -> Matrix2<f64> {
    loop {
        let f = Matrix2::identity() + random_matrix(rng, 1.5);
        if f.determinant() >= 0.05 {
            return f;
        }
    }
}

fn random_strain_gradient(rng: &mut impl Rng) -> Vector2<f64> {
    let r = 10f64.powf(rng.gen_range(-3.0..1.0));
    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    Vector2::new(r * a.cos(), r * a.sin())
}

// --------------------------------------------------------------- multistart

/// Best point found by the multistart search.
#[derive(Clone, Debug)]
pub struct MultistartResult {
    pub best_energy: f64,
    pub argmin: VectorField,
    pub starts: usize,
}

/// Minimize the mechanical step functional by gradient descent from
/// `n_starts` random admissible initializations. Descent directions come from
/// central differences of the functional, not from its analytic gradient.
pub fn multistart_min_oracle(
    grid: &Grid2D,
    material: &MaterialParams,
    input: &MechStepInput,
    n_starts: usize,
    seed: u64,
) -> Result<MultistartResult> {
    if grid.n() > 4 {
        return Err(Error::InvalidParameter(format!(
            "multistart oracle needs at most two interior nodes per side, got n = {}",
            grid.n()
        )));
    }
    let problem = MechanicalProblem::new(grid, material, input)?;
    let id = VectorField::identity(grid);
    let base = problem.dofs_from_field(&input.y_prev);
    let id_dofs = problem.dofs_from_field(&id);
    let energy = |x: &DVector<f64>| -> f64 {
        match problem.assemble_increment(&(x - &base), false, false) {
            Ok((_, asm)) => asm.terms.total(),
            Err(_) => f64::INFINITY,
        }
    };
    let amp = 0.3 * grid.dx();
    let best = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = sample_rng(seed, "multistart", i);
            let start = loop {
                let x = id_dofs.map(|v| v + rng.gen_range(-amp..amp));
                if energy(&x).is_finite() {
                    break x;
                }
            };
            let (x, e) = descend(&energy, start);
            (e, i, x)
        })
        .reduce_with(|a, b| if (b.0, b.1) < (a.0, a.1) || a.0.is_nan() { b } else { a })
        .ok_or_else(|| Error::InvalidParameter("n_starts must be positive".into()))?;
    Ok(MultistartResult {
        best_energy: best.0,
        argmin: problem.field_from_dofs(&input.y_prev, &best.2),
        starts: n_starts,
    })
}

/// Gradient descent with Barzilai–Borwein steps and an Armijo safeguard.
fn descend(energy: &impl Fn(&DVector<f64>) -> f64, mut x: DVector<f64>) -> (DVector<f64>, f64) {
    let h = 1e-5;
    let grad = |x: &DVector<f64>| {
        DVector::from_fn(x.len(), |i, _| {
            let mut p = x.clone();
            let mut m = x.clone();
            p[i] += h;
            m[i] -= h;
            (energy(&p) - energy(&m)) / (2.0 * h)
        })
    };
    let mut e = energy(&x);
    let mut g = grad(&x);
    let mut step = 1e-3;
    for _ in 0..500 {
        let gn = g.norm_squared();
        if !gn.is_finite() || gn.sqrt() <= 1e-8 * (1.0 + e.abs()) {
            break;
        }
        let mut t = step;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x - &g * t;
            let et = energy(&trial);
            if et <= e - 1e-4 * t * gn {
                accepted = Some((trial, et));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, en)) = accepted else { break };
        let gn_new = grad(&xn);
        let s = &xn - &x;
        let yv = &gn_new - &g;
        let sy = s.dot(&yv);
        step = if sy > 0.0 { s.norm_squared() / sy } else { 2.0 * t };
        x = xn;
        e = en;
        g = gn_new;
    }
    (x, e)
}

// ------------------------------------------------------------------ runner

/// All oracle suites in a fixed order.
pub fn run_verification(model: &dyn Constitutive, seed: u64) -> Vec<OracleReport> {
    let mut reports = identity_suite(model, seed);
    reports.extend(symmetry_suite(model, seed));
    reports.extend(fd_gradient_suite(model, seed));
    reports.extend(bound_audit_suite(model, seed));
    reports
}

pub fn all_pass(reports: &[OracleReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotations_are_proper() {
        let mut rng = sample_rng(1, "rot", 0);
        for _ in 0..100 {
            let q = random_rotation(&mut rng);
            assert!((q.determinant() - 1.0).abs() < 1e-14);
            assert!((q.transpose() * q - Matrix2::identity()).norm() < 1e-14);
        }
        assert_eq!(rotation(FRAC_PI_2), Matrix2::new(0.0, -1.0, 1.0, 0.0));
    }

    #[test]
    fn report_passes_only_within_tolerance() {
        let r = OracleReport::from_samples("x", 0, 1e-6, vec![(1e-7, "a".into()), (2e-6, "b".into())]);
        assert!(!r.pass);
        assert_eq!(r.worst_case, "b");
        let r = OracleReport::from_samples("x", 0, 1e-6, vec![(f64::NAN, "nan".into())]);
        assert!(!r.pass);
    }

    #[test]
    fn equilibrium_multistart_finds_identity() {
        let grid = Grid2D::new(3).unwrap();
        let mat = MaterialParams::default();
        let input = MechStepInput {
            y_prev: VectorField::identity(&grid),
            theta_prev: ScalarField::constant(&grid, 1.0),
            delayed_velocity: VectorField::zeros(&grid),
            f_avg: VectorField::zeros(&grid),
            tau: 0.01,
            h: 0.04,
            eps: 1e-3,
            rho: 1.0,
        };
        let res = multistart_min_oracle(&grid, &mat, &input, 200, 3).unwrap();
        let centre = grid.interior()[0];
        assert!((res.argmin.0[centre] - Vector2::new(0.5, 0.5)).norm() < 1e-6);
    }
}
