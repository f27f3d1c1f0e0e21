use faer::c64;
use kspec_core::spectral_engine::eig_dense;
use kspec_core::operator_assembly::assemble_torus_block;
use kspec_core::sweep_analysis::*;
use kspec_core::Error;

fn c(re: f64, im: f64) -> c64 {
    c64::new(re, im)
}

fn leading_window() -> Window {
    Window { center: c(0.0, -0.2), radius: 1.0 }
}

#[test]
fn diagonal_family_extrapolates_to_zero() {
    let cfg = SweepConfig {
        k: (0, 0),
        eps_max: 0.2,
        eps_min: 1e-3,
        ratio: 0.8,
        window: Window { center: c(0.0, -0.5), radius: 1.0 },
        truncation: Truncation::Fixed(8),
    };
    let mut branches = sweep(&cfg).unwrap();
    assert!(!branches.is_empty());
    extrapolate_all(&mut branches);
    for b in &branches {
        assert_eq!(b.status, BranchStatus::Tracked, "{:?}", b.samples[0]);
        let l = b.limit.unwrap();
        assert!(l.value.norm() < 1e-14 && l.error < 1e-14, "{l:?}");
        // Linear in ε with Im λ strictly decreasing in ε.
        for w in b.samples.windows(2) {
            if w[0].lambda.im != 0.0 {
                assert!(w[0].lambda.im < w[1].lambda.im);
            }
        }
    }
}

#[test]
fn empty_window_is_an_error() {
    let cfg = SweepConfig {
        k: (1, 0),
        eps_max: 0.2,
        eps_min: 1e-3,
        ratio: 0.8,
        window: Window { center: c(10.0, 10.0), radius: 0.5 },
        truncation: Truncation::Default,
    };
    assert!(matches!(sweep(&cfg), Err(Error::Invalid(_))));
}

fn endpoints(branches: &[Branch]) -> Vec<(c64, c64, BranchStatus)> {
    branches.iter().map(|b| (b.samples[0].lambda, b.samples.last().unwrap().lambda, b.status)).collect()
}

#[test]
fn leading_branches_match_fine_grid_rerun() {
    let coarse = SweepConfig {
        k: (1, 0),
        eps_max: 0.2,
        eps_min: 1e-3,
        ratio: 0.8,
        window: leading_window(),
        truncation: Truncation::Default,
    };
    let fine = SweepConfig { ratio: 0.95, ..coarse.clone() };
    let a = sweep(&coarse).unwrap();
    let b = sweep(&fine).unwrap();
    assert_eq!(a.len(), b.len());
    let (ea, eb) = (endpoints(&a), endpoints(&b));
    let mut tracked = 0;
    for (x, y) in ea.iter().zip(&eb) {
        assert_eq!(x.0, y.0);
        if x.2 == BranchStatus::Tracked && y.2 == BranchStatus::Tracked {
            tracked += 1;
            assert!((x.1 - y.1).norm() < 1e-10, "{x:?} vs {y:?}");
        }
    }
    assert!(tracked >= 2, "{ea:?}");
    for br in &a {
        for s in &br.samples {
            assert!(s.lambda.im <= 1e-12);
        }
    }
}

#[test]
fn sweeps_are_deterministic() {
    let cfg = SweepConfig {
        k: (1, 0),
        eps_max: 0.2,
        eps_min: 1e-2,
        ratio: 0.8,
        window: leading_window(),
        truncation: Truncation::Default,
    };
    assert_eq!(sweep(&cfg).unwrap(), sweep(&cfg).unwrap());
}

#[test]
fn diagonal_slope_is_minus_i_n_squared() {
    for n in [0i64, 1, 3] {
        let target = c(0.0, -0.1 * (n * n) as f64);
        let r = perturbation_check((0, 0), 0.1, 8, target, 1e-3).unwrap();
        assert!((r.formula_slope - c(0.0, -(n * n) as f64)).norm() < 1e-12);
        for s in &r.fd_slopes {
            assert!((s - c(0.0, -(n * n) as f64)).norm() < 1e-9);
        }
    }
}

#[test]
fn leading_slope_matches_finite_differences() {
    let b = assemble_torus_block((1, 0), 1e-2, 128).unwrap();
    let lead = eig_dense(&b).unwrap()[1].lambda;
    let r = perturbation_check((1, 0), 1e-2, 128, lead, 1e-3).unwrap();
    assert!(r.relative_residuals[0] <= 5e-3, "{:?}", r.relative_residuals);
    assert!(r.improves, "{:?}", r.relative_residuals);
}

#[test]
fn mismatched_left_vector_is_refused() {
    let b = assemble_torus_block((1, 0), 0.1, 32).unwrap();
    let ev = eig_dense(&b).unwrap();
    let e = first_order_slope(&b, &ev[0].right, &ev[3].left).unwrap_err();
    assert!(matches!(e, Error::Refused(_)));
}

#[test]
fn mirror_spectrum_under_eps_sign_flip() {
    for (k, eps) in [((0, 0), 0.1), ((1, 0), 0.1), ((2, 1), 0.05), ((3, -2), 0.5)] {
        let r = conjugation_check(k, eps, 64).unwrap();
        assert!(r.adjoint_defect == 0.0);
        assert!(r.residual < 1e-10, "{k:?} {eps}: {}", r.residual);
    }
    let r = conjugation_check((1, 0), 0.0, 64).unwrap();
    assert!(r.residual.is_finite());
}
