use kspec_core::frame_calculus::*;
use kspec_core::geometry::{CospherePoint, ManifoldModel, Profile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn commutation_suite_flat_torus() {
    let r = verify_commutation_suite(&FrameBase::<f64>::Surface(ManifoldModel::FlatTorus2), &SuiteOptions::default()).unwrap();
    for i in &r.identities {
        assert!(i.passed, "{} residual {:e}", i.identity, i.max_residual);
    }
    assert!(r.identities.len() >= 4);
}

#[test]
fn commutation_suite_flat_three_frames() {
    let r = verify_commutation_suite(&FrameBase::<f64>::Euclidean(3), &SuiteOptions::default()).unwrap();
    assert!(r.passed(), "{:?}", r.failures());
    assert!(r.max_residual() < 1e-6);
}

#[test]
fn commutation_suite_curved_surfaces() {
    let opts = SuiteOptions { trials: 20, ..SuiteOptions::default() };
    for m in [ManifoldModel::Sphere2, ManifoldModel::RevolutionSurface(Profile::Cosine(vec![2.0, 1.0]))] {
        let r = verify_commutation_suite(&FrameBase::Surface(m), &opts).unwrap();
        assert!(r.passed(), "{:?}", r.failures());
    }
}

#[test]
fn constant_function_gives_exact_zero() {
    let opts = SuiteOptions { trials: 1, constant_function: true, ..SuiteOptions::default() };
    let r = verify_commutation_suite(&FrameBase::<f64>::Surface(ManifoldModel::Sphere2), &opts).unwrap();
    assert_eq!(r.max_residual(), 0.0);
}

#[test]
fn vertical_bracket_in_dimension_three() {
    let base = FrameBase::<f64>::Euclidean(3);
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    for _ in 0..20 {
        let p = FramePoint::random(&base, &mut rng);
        let f = TestFunction::random(12, 4, &mut rng);
        let lhs = lie_bracket(&base, &FieldOp::V(1, 2), &FieldOp::V(2, 3), &f, &p).unwrap();
        let rhs = apply_field(&base, &FieldOp::V(1, 3), &f, &p).unwrap();
        assert!((lhs - rhs).abs() < 1e-7, "{lhs} vs {rhs}");
    }
}

#[test]
fn mixed_bracket_on_flat_torus() {
    let base = FrameBase::<f64>::Surface(ManifoldModel::FlatTorus2);
    let mut rng = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    for _ in 0..20 {
        let p = FramePoint::random(&base, &mut rng);
        let f = TestFunction::random(6, 4, &mut rng);
        let lhs = lie_bracket(&base, &FieldOp::V(1, 2), &FieldOp::Htilde(2), &f, &p).unwrap();
        let rhs = apply_field(&base, &FieldOp::Htilde(1), &f, &p).unwrap();
        assert!((lhs - rhs).abs() < 1e-7);
    }
}

#[test]
fn lifted_laplacian_reproduces_fiber_spectrum() {
    for d in [2, 3] {
        let r = verify_intertwining(d).unwrap();
        assert!(r.passed, "d = {d}: {:e}", r.max_residual);
        for h in &r.harmonics {
            let want = if d == 2 { (h.degree * h.degree) as f64 } else { (h.degree * (h.degree + 1)) as f64 };
            assert_eq!(h.expected_eigenvalue, want);
            assert!((h.measured_eigenvalue - want).abs() < 1e-8, "{}: {}", h.harmonic, h.measured_eigenvalue);
        }
    }
}

#[test]
fn nash_sum_of_squares() {
    for m in [ManifoldModel::<f64>::FlatTorus2, ManifoldModel::Sphere2] {
        let (fields, r) = nash_fields(&m).unwrap();
        assert_eq!(fields.len(), r.fields);
        assert!(r.sum_of_squares_passed, "{:e}", r.sum_of_squares_residual);
        // On the unit sphere S^{d-1} the projected coordinate fields have div X_j = −(d−1) y_j.
        for (j, dv) in r.divergence.iter().enumerate() {
            assert!(*dv > 0.1, "field {j}: {dv}");
        }
    }
    assert!(nash_fields(&ManifoldModel::RevolutionSurface(Profile::Cosine(vec![2.0, 1.0]))).is_err());
}

#[test]
fn sphere_horizontal_curve_projects_to_a_great_circle() {
    let m = ManifoldModel::<f64>::Sphere2;
    let base = FrameBase::Surface(m.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = FramePoint::random(&base, &mut rng);
    p.z = vec![1.1, 0.4];
    p.reorthonormalize(&base);
    let start = CospherePoint::new([p.z[0], p.z[1]], [p.zeta[0], p.zeta[1]]);
    for t in [0.25, 0.5, 0.75, 1.0] {
        let q = integrate_horizontal(&m, &p, 1, t, false).unwrap();
        let g = m.geodesic_flow(&start, t).unwrap();
        let err = ((q.z[0] - g.z[0]).powi(2) + (q.z[1] - g.z[1]).powi(2)).sqrt();
        assert!(err < 1e-6, "t = {t}: {err}");
    }
}

#[test]
fn revolution_transport_preserves_the_frame() {
    let m = ManifoldModel::RevolutionSurface(Profile::Cosine(vec![2.0, 1.0]));
    let base = FrameBase::Surface(m.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = FramePoint::random(&base, &mut rng);
    let q = integrate_horizontal(&m, &p, 1, 1.0, false).unwrap();
    assert!(q.orthonormality_defect(&base) < 1e-8, "{}", q.orthonormality_defect(&base));
    let r = integrate_horizontal(&m, &p, 1, 1.0, true).unwrap();
    assert!(r.orthonormality_defect(&base) < 1e-14);
}

#[test]
fn antisymmetry_of_vertical_fields() {
    let base = FrameBase::<f64>::Euclidean(3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = FramePoint::random(&base, &mut rng);
    let f = TestFunction::random(12, 4, &mut rng);
    for (k, l) in [(1, 2), (1, 3), (2, 3)] {
        let a = apply_field(&base, &FieldOp::V(k, l), &f, &p).unwrap();
        let b = apply_field(&base, &FieldOp::V(l, k), &f, &p).unwrap();
        assert!((a + b).abs() < 1e-14);
    }
}
