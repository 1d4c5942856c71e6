use std::f64::consts::PI;
use std::sync::Arc;

use halfspace_calculus::linalg::{c, CMat, C64};
use halfspace_calculus::model::*;
use halfspace_calculus::symbol::ParamPoint;
use proptest::prelude::*;

fn unitary(a: f64, b: f64, phase: f64) -> CMat {
    let (s, co) = a.sin_cos();
    let e = C64::from_polar(1.0, b);
    CMat::from_row_slice(2, 2, &[c(co), -e.conj() * s, e * s, c(co)]) * C64::from_polar(1.0, phase)
}

#[test]
fn dirichlet_and_neumann_pass_on_default_grids() {
    let g = EllipticityGrids::default();
    for theta in [PI / 4.0, PI / 2.0, PI, 1.5 * PI] {
        let m = LaplaceTypeModel::laplacian(2, 1, theta).unwrap();
        for bc in [ProjectionBC::dirichlet(1), ProjectionBC::neumann(1)] {
            let r = assemble_report(&m, &bc, &g).unwrap();
            assert!(r.pass, "theta={theta} {:?}: {:?}", bc.kind, r.reports);
        }
    }
}

#[test]
fn pi3_is_stable_in_truncation() {
    let m = LaplaceTypeModel::laplacian(2, 2, 0.8 * PI).unwrap();
    let pi = CMat::from_row_slice(2, 2, &[c(0.5), c(0.5), c(0.5), c(0.5)]);
    let bc = ProjectionBC::projection(2, Arc::new(move |_: &[f64]| pi.clone()), Arc::new(|_: &[f64]| CMat::zeros(2, 2)));
    let mut passes = Vec::new();
    for n in [64, 128, 256] {
        let g = EllipticityGrids { n_modes: n, ..Default::default() };
        let r = check_pi3(&m, &bc, &g).unwrap();
        assert!(r.details["nullspace_misalignment"] < 1e-6);
        passes.push(r.pass);
    }
    assert!(passes.iter().all(|p| *p));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reduced_matrix_invertibility_is_unitarily_invariant(
        a in 0.0..PI, b in 0.0..2.0 * PI, ph in 0.0..2.0 * PI,
        theta in 0.1..6.2f64, ang in 0.05..1.5f64, beta in -2.0..2.0f64,
    ) {
        let m = LaplaceTypeModel::laplacian(2, 2, theta).unwrap();
        let u = unitary(a, b, ph);
        let pi0 = CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![c(1.0), c(0.0)]));
        let b0 = CMat::identity(2, 2) * c(beta);
        let mk = |p: CMat| {
            let bb = b0.clone();
            ProjectionBC::projection(
                2,
                Arc::new(move |_: &[f64]| p.clone()),
                Arc::new(move |xi: &[f64]| &bb * c(xi[0].abs())),
            )
        };
        let plain = mk(pi0.clone());
        let rotated = mk(&u * &pi0 * u.adjoint());
        let pt = ParamPoint::at_origin(vec![ang.cos()], ang.sin()).unwrap();
        let s0 = halfspace_calculus::linalg::singular_values(&reduced_bc_matrix(&m, &plain, &pt).unwrap());
        let s1 = halfspace_calculus::linalg::singular_values(&reduced_bc_matrix(&m, &rotated, &pt).unwrap());
        for (x, y) in s0.iter().zip(&s1) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let g = EllipticityGrids { pi2_radial: 12, pi2_dirs: 2, n_modes: 16, ..Default::default() };
        let r0 = check_pi2(&m, &plain, &g);
        let r1 = check_pi2(&m, &rotated, &g);
        prop_assert_eq!(r0.pass, r1.pass);
        prop_assert!((r0.details["reduced_min_sv"] - r1.details["reduced_min_sv"]).abs() < 1e-12);
    }
}
