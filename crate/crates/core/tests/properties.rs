use nalgebra::{Matrix2, Vector2};
use proptest::prelude::*;
use thermovisco::audit::audit_trajectory;
use thermovisco::config::{parse_config, render_config};
use thermovisco::driver::{run_trajectory, ForceShape, SchemeConfig};
use thermovisco::grid::{grad_cells, laplacian_nodes};
use thermovisco::oracles::rotation;
use thermovisco::{Grid2D, MaterialParams, VectorField};

fn deformation() -> impl Strategy<Value = Matrix2<f64>> {
    (0.5..2.0f64, 0.5..2.0f64, -0.5..0.5f64, -3.2..3.2f64).prop_map(|(a, b, s, angle)| {
        rotation(angle) * Matrix2::new(a, s, 0.0, b)
    })
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn energies_are_frame_indifferent(f in deformation(), angle in -3.2..3.2f64, theta in 0.0..5.0f64) {
        let m = MaterialParams::default();
        let q = rotation(angle);
        let qf = q * f;
        prop_assert!(close(m.elastic_energy(&f).unwrap(), m.elastic_energy(&qf).unwrap(), 1e-12));
        prop_assert!(close(m.coupling_energy(&f, theta).unwrap(), m.coupling_energy(&qf, theta).unwrap(), 1e-12));
    }

    #[test]
    fn elastic_energy_is_nonnegative(f in deformation()) {
        prop_assert!(MaterialParams::default().elastic_energy(&f).unwrap() >= 0.0);
    }

    #[test]
    fn internal_energy_inverts(f in deformation(), theta in 0.0..10.0f64) {
        let m = MaterialParams::default();
        let w = m.internal_energy(&f, theta).unwrap();
        prop_assert!(w >= 0.0);
        prop_assert!(close(m.invert_internal_energy(&f, w).unwrap(), theta, 1e-10));
    }

    #[test]
    fn dissipation_is_twice_the_potential(f in deformation(), a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64, theta in 0.0..5.0f64) {
        let m = MaterialParams::default();
        let fdot = Matrix2::new(a, b, c, -a);
        let xi = m.dissipation_rate(&f, &fdot, theta);
        prop_assert!(xi >= 0.0);
        prop_assert!(close(xi, 2.0 * m.dissipation_potential(&f, &fdot, theta), 1e-12));
    }

    #[test]
    fn strain_gradient_energy_is_convex(v in prop::array::uniform2(-3.0..3.0f64), w in prop::array::uniform2(-3.0..3.0f64), t in 0.0..1.0f64) {
        let m = MaterialParams::default();
        let (v, w) = (Vector2::from(v), Vector2::from(w));
        let mid = m.strain_gradient_energy(&(v * (1.0 - t) + w * t));
        let chord = (1.0 - t) * m.strain_gradient_energy(&v) + t * m.strain_gradient_energy(&w);
        prop_assert!(mid <= chord + 1e-12 * chord.abs().max(1.0));
    }

    #[test]
    fn affine_maps_have_exact_gradients(n in 3usize..8, a in prop::array::uniform4(-2.0..2.0f64)) {
        let grid = Grid2D::new(n).unwrap();
        let m = Matrix2::new(a[0], a[1], a[2], a[3]);
        let y = VectorField::from_fn(&grid, |x1, x2| m * Vector2::new(x1, x2) + Vector2::new(0.3, -0.1));
        for g in grad_cells(&grid, &y).unwrap() {
            prop_assert!((g - m).norm() <= 1e-12);
        }
        for l in laplacian_nodes(&grid, &y).unwrap() {
            prop_assert!(l.norm() <= 1e-9);
        }
    }

    #[test]
    fn config_text_round_trips(num in 1u32..9, den_pow in 5u32..9, eps in 1e-4..1e-1f64) {
        let mut c = SchemeConfig::default();
        c.h = num as f64 / 40.0;
        c.tau = c.h / 2f64.powi(den_pow as i32 - 4);
        c.eps = eps;
        prop_assume!(c.validate().is_ok());
        let back = parse_config(&render_config(&c)).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn short_runs_keep_invariants(vx in -0.8..0.8f64, vy in -0.8..0.8f64, kappa in 0.0..2.0f64) {
        let mut c = SchemeConfig::default();
        c.n = 6;
        c.t_final = 1.0 / 40.0;
        c.kappa = kappa;
        c.forcing.shape = ForceShape::None;
        c.initial.v0_amplitude = [vx, vy];
        let traj = run_trajectory(&c).unwrap();
        let audit = audit_trajectory(&traj).unwrap();
        prop_assert!(audit.all_pass(), "{:?}", audit.invariants());
        prop_assert!(audit.monitors.min_theta >= 0.0);
        prop_assert!(audit.monitors.min_det > 0.0);
    }
}
