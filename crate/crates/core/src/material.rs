//! Constitutive potentials of the thermo-viscoelastic model and their exact
//! derivatives.
//!
//! Everything here is a pure function of its arguments. Matrices are 2×2
//! (`nalgebra::Matrix2`); fourth-order tangents act on the row-major
//! flattening `[F11, F12, F21, F22]` and are returned as `Matrix4`.
//!
//! The concrete model is
//!
//! * elastic energy `W_el(F) = mu/2 (|F|^2 - 2) + gamma det(F)^-q - (mu - q gamma) log det F`,
//! * strain-gradient potential `H(v) = h(|v|)` with `h(s) = ∫_0^s max(2σ, p σ^(p-1)) dσ`,
//! * coupling energy `W_cpl(F, θ) = -c_V θ log θ + alpha tanh(|F|^2 - 2) θ / (1 + θ)`,
//! * dissipation `R(F, Ḟ, θ) = 1/2 (1 + 1/(1 + θ)) |Ċ|^2`, `Ċ = ḞᵀF + FᵀḞ`,
//! * conductivity `K(θ) = kappa0 (1 + θ / (1 + θ)) Id`.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial dimension.
pub const DIM: usize = 2;

/// Row-major flattening of a 2×2 matrix.
#[inline]
pub fn flatten(m: &Matrix2<f64>) -> Vector4<f64> {
    Vector4::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

#[inline]
pub fn unflatten(v: &Vector4<f64>) -> Matrix2<f64> {
    Matrix2::new(v[0], v[1], v[2], v[3])
}

/// Frobenius contraction `A : B`.
#[inline]
pub fn contract(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    a.component_mul(b).sum()
}

/// Cofactor matrix `det(F) F^-T`; linear in F for d = 2.
#[inline]
pub fn cofactor(f: &Matrix2<f64>) -> Matrix2<f64> {
    Matrix2::new(f[(1, 1)], -f[(1, 0)], -f[(0, 1)], f[(0, 0)])
}

/// Derivative of `flatten(cofactor(F))` with respect to `flatten(F)`.
fn cofactor_jacobian() -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m[(0, 3)] = 1.0;
    m[(1, 2)] = -1.0;
    m[(2, 1)] = -1.0;
    m[(3, 0)] = 1.0;
    m
}

#[inline]
fn checked_det(f: &Matrix2<f64>) -> Result<f64> {
    let det = f.determinant();
    if det > 0.0 && det.is_finite() {
        Ok(det)
    } else {
        Err(Error::NonPositiveDeterminant { det })
    }
}

#[inline]
fn checked_theta(theta: f64) -> Result<f64> {
    if theta >= 0.0 && theta.is_finite() {
        Ok(theta)
    } else {
        Err(Error::NegativeTemperature(theta))
    }
}

/// One material point: deformation gradient, its rate and the temperature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameState {
    pub f: Matrix2<f64>,
    pub fdot: Matrix2<f64>,
    pub theta: f64,
}

impl FrameState {
    pub fn new(f: Matrix2<f64>, fdot: Matrix2<f64>, theta: f64) -> Result<Self> {
        checked_det(&f)?;
        checked_theta(theta)?;
        Ok(Self { f, fdot, theta })
    }

    /// Right Cauchy–Green tensor `C = FᵀF`.
    pub fn right_cauchy_green(&self) -> Matrix2<f64> {
        self.f.transpose() * self.f
    }

    /// `Ċ = ḞᵀF + FᵀḞ`.
    pub fn strain_rate(&self) -> Matrix2<f64> {
        strain_rate(&self.f, &self.fdot)
    }
}

/// `Ċ = ḞᵀF + FᵀḞ`.
#[inline]
pub fn strain_rate(f: &Matrix2<f64>, fdot: &Matrix2<f64>) -> Matrix2<f64> {
    fdot.transpose() * f + f.transpose() * fdot
}

/// Parameter set of the constitutive model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Growth exponent of the strain-gradient potential, `p > 2`.
    pub p: f64,
    pub mu: f64,
    pub gamma: f64,
    /// Determinant exponent, `q_det >= 2p / (p - 2)`.
    pub q_det: f64,
    pub c_v: f64,
    pub alpha: f64,
    pub kappa0: f64,
    /// Audit constant for the bound checks; not used by the model itself.
    pub c0: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            p: 4.0,
            mu: 1.0,
            gamma: 0.1,
            q_det: 4.0,
            c_v: 1.0,
            alpha: 0.5,
            kappa0: 1.0,
            c0: 10.0,
        }
    }
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let d = DIM as f64;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.p > d) || !self.p.is_finite() {
            return bad(format!("p = {} must exceed d = {}", self.p, d));
        }
        let q_min = self.p * d / (self.p - d);
        if !(self.q_det >= q_min) {
            return bad(format!("q_det = {} must be >= pd/(p-d) = {}", self.q_det, q_min));
        }
        for (name, v) in [
            ("mu", self.mu),
            ("gamma", self.gamma),
            ("c_v", self.c_v),
            ("kappa0", self.kappa0),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.alpha.abs() < 3.0 * self.c_v) {
            return bad(format!(
                "|alpha| = {} must stay below 3 c_V = {}",
                self.alpha.abs(),
                3.0 * self.c_v
            ));
        }
        if !(self.c0 >= 1.0) {
            return bad(format!("c0 = {} must be >= 1", self.c0));
        }
        Ok(())
    }

    // ---------------------------------------------------------------- elastic

    fn log_coefficient(&self) -> f64 {
        self.mu - self.q_det * self.gamma
    }

    pub fn elastic_energy(&self, f: &Matrix2<f64>) -> Result<f64> {
        let det = checked_det(f)?;
        Ok(0.5 * self.mu * (f.norm_squared() - DIM as f64) + self.gamma * det.powf(-self.q_det)
            - self.log_coefficient() * det.ln())
    }

    /// First Piola stress `∂_F W_el`.
    pub fn elastic_stress(&self, f: &Matrix2<f64>) -> Result<Matrix2<f64>> {
        let det = checked_det(f)?;
        let g = -self.q_det * self.gamma * det.powf(-self.q_det - 1.0) - self.log_coefficient() / det;
        Ok(f * self.mu + cofactor(f) * g)
    }

    /// `∂²_FF W_el` on the flattened gradient.
    pub fn elastic_tangent(&self, f: &Matrix2<f64>) -> Result<Matrix4<f64>> {
        let det = checked_det(f)?;
        let q = self.q_det;
        let g = -q * self.gamma * det.powf(-q - 1.0) - self.log_coefficient() / det;
        let dg = q * (q + 1.0) * self.gamma * det.powf(-q - 2.0) + self.log_coefficient() / (det * det);
        let c = flatten(&cofactor(f));
        Ok(Matrix4::identity() * self.mu + c * c.transpose() * dg + cofactor_jacobian() * g)
    }

    // -------------------------------------------------------- strain gradient

    /// Radius where the two branches of `max(2σ, p σ^(p-1))` meet.
    pub fn branch_point(&self) -> f64 {
        (2.0 / self.p).powf(1.0 / (self.p - 2.0))
    }

    /// `h(s) = ∫_0^s max(2σ, p σ^(p-1)) dσ` for `s >= 0`.
    pub fn h_scalar(&self, s: f64) -> f64 {
        let s = s.abs();
        let b = self.branch_point();
        if s <= b {
            s * s
        } else {
            b * b + s.powf(self.p) - b.powf(self.p)
        }
    }

    pub fn strain_gradient_energy(&self, v: &Vector2<f64>) -> f64 {
        self.h_scalar(v.norm())
    }

    fn strain_gradient_factor(&self, s: f64) -> f64 {
        (self.p * s.powf(self.p - 2.0)).max(2.0)
    }

    /// `DH(v) = max(2, p|v|^(p-2)) v`.
    pub fn strain_gradient_force(&self, v: &Vector2<f64>) -> Vector2<f64> {
        v * self.strain_gradient_factor(v.norm())
    }

    /// Hessian of `H`, defined everywhere except on the branch circle where
    /// the one-sided limits differ; the quadratic branch is used there.
    pub fn strain_gradient_hessian(&self, v: &Vector2<f64>) -> Matrix2<f64> {
        let s = v.norm();
        let g = self.strain_gradient_factor(s);
        let mut hess = Matrix2::identity() * g;
        if s > self.branch_point() {
            let p = self.p;
            hess += v * v.transpose() * (p * (p - 2.0) * s.powf(p - 4.0));
        }
        hess
    }

    // --------------------------------------------------------------- coupling

    fn coupling_shape(f: &Matrix2<f64>) -> f64 {
        (f.norm_squared() - DIM as f64).tanh()
    }

    pub fn coupling_energy(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        if theta == 0.0 {
            return Ok(0.0);
        }
        let t = Self::coupling_shape(f);
        Ok(-self.c_v * theta * theta.ln() + self.alpha * t * theta / (1.0 + theta))
    }

    /// `∂_F W_cpl`, continuously extended by zero at `θ = 0`.
    pub fn coupling_stress(&self, f: &Matrix2<f64>, theta: f64) -> Result<Matrix2<f64>> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        let t = Self::coupling_shape(f);
        Ok(f * (2.0 * self.alpha * (1.0 - t * t) * theta / (1.0 + theta)))
    }

    /// `∂²_FF W_cpl` on the flattened gradient.
    pub fn coupling_tangent(&self, f: &Matrix2<f64>, theta: f64) -> Result<Matrix4<f64>> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        let t = Self::coupling_shape(f);
        let phi = theta / (1.0 + theta);
        let vf = flatten(f);
        Ok((Matrix4::identity() * 2.0 - vf * vf.transpose() * (8.0 * t)) * (self.alpha * phi * (1.0 - t * t)))
    }

    /// `∂_θ W_cpl`, defined for `θ > 0`.
    pub fn coupling_dtheta(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        checked_det(f)?;
        if !(theta > 0.0) {
            return Err(Error::NegativeTemperature(theta));
        }
        let t = Self::coupling_shape(f);
        Ok(-self.c_v * (theta.ln() + 1.0) + self.alpha * t / ((1.0 + theta) * (1.0 + theta)))
    }

    /// `∂²_θθ W_cpl`, defined for `θ > 0`.
    pub fn coupling_d2_theta(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        checked_det(f)?;
        if !(theta > 0.0) {
            return Err(Error::NegativeTemperature(theta));
        }
        let t = Self::coupling_shape(f);
        Ok(-self.c_v / theta - 2.0 * self.alpha * t / (1.0 + theta).powi(3))
    }

    /// `∂²_Fθ W_cpl`.
    pub fn coupling_d2_f_theta(&self, f: &Matrix2<f64>, theta: f64) -> Result<Matrix2<f64>> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        let t = Self::coupling_shape(f);
        Ok(f * (2.0 * self.alpha * (1.0 - t * t) / ((1.0 + theta) * (1.0 + theta))))
    }

    // --------------------------------------------------------- internal energy

    /// `W_in = W_cpl - θ ∂_θ W_cpl = c_V θ + alpha tanh(|F|^2 - 2) θ^2 / (1 + θ)^2`.
    pub fn internal_energy(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        let t = Self::coupling_shape(f);
        let r = theta / (1.0 + theta);
        Ok(self.c_v * theta + self.alpha * t * r * r)
    }

    /// Heat capacity `∂_θ W_in = -θ ∂²_θθ W_cpl`.
    pub fn heat_capacity(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        let t = Self::coupling_shape(f);
        Ok(self.c_v + 2.0 * self.alpha * t * theta / (1.0 + theta).powi(3))
    }

    /// Closed-form primitive `∫_0^θ W_in(F, s) ds`.
    pub fn internal_energy_primitive(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        let t = Self::coupling_shape(f);
        Ok(0.5 * self.c_v * theta * theta
            + self.alpha * t * (theta - 2.0 * theta.ln_1p() + theta / (1.0 + theta)))
    }

    /// Same primitive by composite 5-point Gauss–Legendre quadrature; serves
    /// models without a closed form and cross-checks the closed form.
    pub fn internal_energy_primitive_quadrature(&self, f: &Matrix2<f64>, theta: f64) -> Result<f64> {
        checked_det(f)?;
        let theta = checked_theta(theta)?;
        const NODES: [f64; 5] = [
            -0.906_179_845_938_664,
            -0.538_469_310_105_683,
            0.0,
            0.538_469_310_105_683,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.236_926_885_056_189,
            0.478_628_670_499_366,
            0.568_888_888_888_889,
            0.478_628_670_499_366,
            0.236_926_885_056_189,
        ];
        let panels = 64usize;
        let width = theta / panels as f64;
        let mut sum = 0.0;
        for k in 0..panels {
            let mid = (k as f64 + 0.5) * width;
            for (x, w) in NODES.iter().zip(WEIGHTS) {
                sum += w * 0.5 * width * self.internal_energy(f, mid + 0.5 * width * x)?;
            }
        }
        Ok(sum)
    }

    /// Inverse of `θ ↦ W_in(F, θ)`: safeguarded Newton with bisection
    /// fallback on `[0, c0 w]`.
    pub fn invert_internal_energy(&self, f: &Matrix2<f64>, w: f64) -> Result<f64> {
        checked_det(f)?;
        if !(w >= 0.0) || !w.is_finite() {
            return Err(Error::NegativeInternalEnergy(w));
        }
        if w == 0.0 {
            return Ok(0.0);
        }
        let mut lo = 0.0;
        let mut hi = self.c0 * w;
        while self.internal_energy(f, hi)? < w {
            hi *= 2.0;
        }
        let mut theta = w / self.c_v;
        if !(theta > lo && theta < hi) {
            theta = 0.5 * (lo + hi);
        }
        for _ in 0..200 {
            let r = self.internal_energy(f, theta)? - w;
            if r.abs() <= 1e-15 * (1.0 + w) {
                return Ok(theta);
            }
            if r > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let step = theta - r / self.heat_capacity(f, theta)?;
            theta = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
            if hi - lo <= 1e-16 * hi {
                return Ok(theta);
            }
        }
        Ok(theta)
    }

    // ------------------------------------------------------------ dissipation

    /// Scalar modulus of the isotropic viscosity tensor, `1 + 1/(1 + θ)`.
    pub fn dissipation_modulus(&self, theta: f64) -> f64 {
        1.0 + 1.0 / (1.0 + theta.max(0.0))
    }

    /// `R = 1/2 Ċ : D(C, θ) Ċ`.
    pub fn dissipation_potential(&self, f: &Matrix2<f64>, fdot: &Matrix2<f64>, theta: f64) -> f64 {
        let cdot = strain_rate(f, fdot);
        0.5 * self.dissipation_modulus(theta) * cdot.norm_squared()
    }

    /// Viscous stress `∂_Ḟ R = 2 F (D Ċ)`.
    pub fn viscous_stress(&self, f: &Matrix2<f64>, fdot: &Matrix2<f64>, theta: f64) -> Matrix2<f64> {
        let cdot = strain_rate(f, fdot);
        f * cdot * (2.0 * self.dissipation_modulus(theta))
    }

    /// Dissipation rate `ξ = ∂_Ḟ R : Ḟ`, evaluated as the contraction.
    pub fn dissipation_rate(&self, f: &Matrix2<f64>, fdot: &Matrix2<f64>, theta: f64) -> f64 {
        contract(&self.viscous_stress(f, fdot, theta), fdot)
    }

    /// `∂²_ḞḞ R` on the flattened rate; constant in Ḟ.
    pub fn viscous_tangent(&self, f: &Matrix2<f64>, theta: f64) -> Matrix4<f64> {
        let mut l = Matrix4::zeros();
        for j in 0..4 {
            let mut e = Vector4::zeros();
            e[j] = 1.0;
            l.set_column(j, &flatten(&strain_rate(f, &unflatten(&e))));
        }
        l.transpose() * l * self.dissipation_modulus(theta)
    }

    // ------------------------------------------------------------ conduction

    /// Spatial conductivity `K(θ) = kappa0 (1 + θ/(1+θ)) Id`.
    pub fn conductivity(&self, theta: f64) -> Matrix2<f64> {
        let theta = theta.max(0.0);
        Matrix2::identity() * (self.kappa0 * (1.0 + theta / (1.0 + theta)))
    }

    /// Reference-configuration conductivity `det F · F^-1 K(θ) F^-T`.
    pub fn pullback_conductivity(&self, f: &Matrix2<f64>, theta: f64) -> Result<Matrix2<f64>> {
        let det = checked_det(f)?;
        let inv = cofactor(f).transpose() / det;
        let k = self.conductivity(theta);
        Ok(inv * k * inv.transpose() * det)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rot(a: f64) -> Matrix2<f64> {
        Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos())
    }

    #[test]
    fn elastic_reference_values() {
        let m = MaterialParams::default();
        let id = Matrix2::identity();
        assert!((m.elastic_energy(&id).unwrap() - m.gamma).abs() < 1e-15);
        assert!(m.elastic_stress(&id).unwrap().norm() < 1e-15);
        let q = rot(0.7);
        assert!((m.elastic_energy(&q).unwrap() - m.gamma).abs() < 1e-14);
    }

    #[test]
    fn elastic_rejects_inverted_cells() {
        let m = MaterialParams::default();
        let f = Matrix2::new(-1.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            m.elastic_energy(&f),
            Err(Error::NonPositiveDeterminant { .. })
        ));
        assert!(m.pullback_conductivity(&Matrix2::zeros(), 1.0).is_err());
    }

    #[test]
    fn h_branches() {
        let m = MaterialParams::default();
        assert!((m.branch_point() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((m.h_scalar(1.0) - 1.25).abs() < 1e-14);
        assert_eq!(m.strain_gradient_energy(&Vector2::zeros()), 0.0);
        assert_eq!(m.strain_gradient_force(&Vector2::zeros()), Vector2::zeros());
        let dh = m.strain_gradient_force(&Vector2::new(0.1, 0.0));
        assert!((dh - Vector2::new(0.2, 0.0)).norm() < 1e-16);
    }

    #[test]
    fn coupling_reference_values() {
        let m = MaterialParams::default();
        let id = Matrix2::identity();
        assert_eq!(m.coupling_energy(&Matrix2::new(2.0, 0.3, 0.0, 1.0), 0.0).unwrap(), 0.0);
        assert!(m.coupling_energy(&id, 1.0).unwrap().abs() < 1e-16);
        for theta in [0.01, 0.5, 1.0, 7.0] {
            let cap = -theta * m.coupling_d2_theta(&id, theta).unwrap();
            assert!((cap - m.c_v).abs() < 1e-14);
        }
        assert!(m.coupling_energy(&id, -1.0).is_err());
    }

    #[test]
    fn internal_energy_and_inverse() {
        let m = MaterialParams::default();
        let id = Matrix2::identity();
        assert_eq!(m.internal_energy(&id, 0.0).unwrap(), 0.0);
        assert!((m.internal_energy(&id, 3.0).unwrap() - 3.0 * m.c_v).abs() < 1e-15);
        assert!((m.invert_internal_energy(&id, m.c_v * 2.5).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(
            m.invert_internal_energy(&id, -0.1),
            Err(Error::NegativeInternalEnergy(_))
        ));
        let f = Matrix2::new(1.3, 0.2, -0.1, 0.9);
        for theta in [0.0, 1e-3, 0.4, 2.0, 50.0] {
            let w = m.internal_energy(&f, theta).unwrap();
            let back = m.invert_internal_energy(&f, w).unwrap();
            assert!((back - theta).abs() <= 1e-10 * (1.0 + theta), "{theta} {back}");
            let closed = m.internal_energy_primitive(&f, theta).unwrap();
            let quad = m.internal_energy_primitive_quadrature(&f, theta).unwrap();
            assert!((closed - quad).abs() <= 1e-10 * (1.0 + closed.abs()));
        }
    }

    #[test]
    fn dissipation_reference_values() {
        let m = MaterialParams::default();
        let id = Matrix2::identity();
        let skew = Matrix2::new(0.0, 1.0, -1.0, 0.0);
        assert_eq!(m.dissipation_potential(&id, &skew, 1.0), 0.0);
        // Ċ = 2 Id; with the modulus factored out, 1/2 |Ċ|^2 = 4.
        let theta = 0.3;
        let r = m.dissipation_potential(&id, &id, theta) / m.dissipation_modulus(theta);
        assert!((r - 4.0).abs() < 1e-15);
    }

    #[test]
    fn pullback_reference_values() {
        let m = MaterialParams { kappa0: 1.0, ..Default::default() };
        let theta = 0.0;
        let k = m.pullback_conductivity(&Matrix2::identity(), theta).unwrap();
        assert!((k - m.conductivity(theta)).norm() < 1e-15);
        let k = m.pullback_conductivity(&Matrix2::new(2.0, 0.0, 0.0, 1.0), theta).unwrap();
        assert!((k - Matrix2::new(0.5, 0.0, 0.0, 2.0)).norm() < 1e-15);
        let q = rot(1.1);
        let k = m.pullback_conductivity(&q, 2.0).unwrap();
        assert!((k - m.conductivity(2.0)).norm() < 1e-14);
    }

    #[test]
    fn parameter_validation() {
        assert!(MaterialParams::default().validate().is_ok());
        let bad_p = MaterialParams { p: 2.0, ..Default::default() };
        assert!(bad_p.validate().is_err());
        let bad_q = MaterialParams { q_det: 3.0, ..Default::default() };
        assert!(bad_q.validate().is_err());
        let bad_alpha = MaterialParams { alpha: 3.5, ..Default::default() };
        assert!(bad_alpha.validate().is_err());
    }
}
