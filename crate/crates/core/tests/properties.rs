use faer::c64;
use kspec_core::frame_calculus::{apply_field, FieldOp, FrameBase, FramePoint, TestFunction};
use kspec_core::geometry::{CospherePoint, ManifoldModel, Profile};
use kspec_core::kinetic_sde::{draw_increments, path_rng, step, PathState, SdeModel};
use kspec_core::operator_assembly::*;
use kspec_core::spectral_engine::{contour_projector, eig_dense, eigenvalues_dense};
use kspec_core::sweep_analysis::conjugation_check;
use num_complex::Complex;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn models() -> impl Strategy<Value = ManifoldModel<f64>> {
    prop_oneof![
        Just(ManifoldModel::FlatTorus2),
        Just(ManifoldModel::Sphere2),
        Just(ManifoldModel::RevolutionSurface(Profile::Cosine(vec![2.0, 1.0]))),
    ]
}

fn chart_point() -> impl Strategy<Value = [f64; 2]> {
    (0.3f64..2.8, -3.0f64..3.0).prop_map(|(a, b)| [a, b])
}

fn unit_covector(m: &ManifoldModel<f64>, z: &[f64; 2], angle: f64) -> [f64; 2] {
    m.normalize(z, &[angle.cos(), angle.sin()]).unwrap()
}

fn torus_k() -> impl Strategy<Value = (i64, i64)> {
    (-4i64..=4, -4i64..=4)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn metric_is_symmetric_positive_definite(m in models(), z in chart_point()) {
        let g = m.metric(&z).unwrap();
        prop_assert_eq!(g[0][1], g[1][0]);
        prop_assert!(g[0][0] > 0.0);
        prop_assert!(g[0][0] * g[1][1] - g[0][1] * g[1][0] > 0.0);
    }

    #[test]
    fn christoffel_symbols_are_symmetric_and_match_differences(m in models(), z in chart_point()) {
        let gam = m.christoffel(&z).unwrap();
        let h = 1e-5;
        let dg = |l: usize| {
            let mut zp = z;
            let mut zm = z;
            zp[l] += h;
            zm[l] -= h;
            let (a, b) = (m.metric(&zp).unwrap(), m.metric(&zm).unwrap());
            [[(a[0][0] - b[0][0]) / (2.0 * h), (a[0][1] - b[0][1]) / (2.0 * h)], [(a[1][0] - b[1][0]) / (2.0 * h), (a[1][1] - b[1][1]) / (2.0 * h)]]
        };
        let d = [dg(0), dg(1)];
        let g = m.metric(&z).unwrap();
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let gi = [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]];
        for mm in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    prop_assert!((gam[mm][i][j] - gam[mm][j][i]).abs() < 1e-15);
                    let mut fd = 0.0;
                    for l in 0..2 {
                        fd += 0.5 * gi[mm][l] * (d[i][l][j] + d[j][l][i] - d[l][i][j]);
                    }
                    prop_assert!((gam[mm][i][j] - fd).abs() < 1e-7, "Γ^{}_{}{}: {} vs {}", mm, i, j, gam[mm][i][j], fd);
                }
            }
        }
    }

    #[test]
    fn geodesic_flow_is_a_unit_speed_group(m in models(), z in chart_point(), a in 0.0f64..6.3, s in 0.0f64..0.6, t in 0.0f64..0.6) {
        let p = CospherePoint::new(z, unit_covector(&m, &z, a));
        let (ps, direct) = (m.geodesic_flow(&p, s), m.geodesic_flow(&p, s + t));
        prop_assume!(ps.is_ok() && direct.is_ok());
        let pst = m.geodesic_flow(&ps.unwrap(), t);
        prop_assume!(pst.is_ok());
        let (pst, direct) = (pst.unwrap(), direct.unwrap());
        prop_assume!(pst.chart == direct.chart);
        let n = m.norm(&direct.z, &direct.zeta1).unwrap();
        prop_assert!((n - 1.0).abs() < 1e-9, "|ζ| = {}", n);
        for i in 0..2 {
            prop_assert!((pst.z[i] - direct.z[i]).abs() < 1e-7);
            prop_assert!((pst.zeta1[i] - direct.zeta1[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn vertical_fields_are_antisymmetric(seed in any::<u64>(), d in 2usize..=3) {
        let base = FrameBase::<f64>::Euclidean(d);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = FramePoint::random(&base, &mut rng);
        let f = TestFunction::random(d + d * d, 3, &mut rng);
        for k in 1..=d {
            prop_assert_eq!(apply_field(&base, &FieldOp::V(k, k), &f, &p).unwrap(), 0.0);
            for l in k + 1..=d {
                let a = apply_field(&base, &FieldOp::V(k, l), &f, &p).unwrap();
                let b = apply_field(&base, &FieldOp::V(l, k), &f, &p).unwrap();
                prop_assert!((a + b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn block_entries_follow_the_generator(k in torus_k(), eps in 0.0f64..1.0, n in 1usize..12) {
        let b = assemble_torus_block(k, eps, n).unwrap();
        let dense = b.to_dense();
        let dim = 2 * n + 1;
        let up = c64::new(k.0 as f64 / 2.0, -(k.1 as f64) / 2.0);
        let lo = c64::new(k.0 as f64 / 2.0, k.1 as f64 / 2.0);
        for i in 0..dim {
            let m = b.mode(i) as f64;
            for j in 0..dim {
                let want = if i == j {
                    c64::new(0.0, -eps * m * m)
                } else if j == i + 1 {
                    up
                } else if i == j + 1 {
                    lo
                } else {
                    c64::new(0.0, 0.0)
                };
                prop_assert_eq!(dense[i * dim + j], want);
            }
        }
    }

    #[test]
    fn spectrum_lies_in_the_closed_lower_half_plane(k in torus_k(), eps in 1e-3f64..1.0) {
        let b = assemble_torus_block(k, eps, 24).unwrap();
        for l in eigenvalues_dense(&b).unwrap() {
            prop_assert!(l.im <= 1e-12, "{}", l);
        }
    }

    #[test]
    fn negative_eps_block_is_the_adjoint(k in torus_k(), eps in 1e-2f64..1.0) {
        let r = conjugation_check(k, eps, 24).unwrap();
        prop_assert_eq!(r.adjoint_defect, 0.0);
        prop_assert!(r.residual < 1e-10);
    }

    #[test]
    fn real_trig_form_is_complex_symmetric(k in torus_k(), eps in 0.0f64..1.0, n in 1usize..8) {
        let b = assemble_torus_block(k, eps, n).unwrap();
        let t = b.real_trig_form();
        let dim = 2 * n + 1;
        for i in 0..dim {
            for j in 0..dim {
                prop_assert!((t[i * dim + j] - t[j * dim + i]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sobolev_norm_is_monotone_in_s(k in torus_k(), eps in 1e-3f64..1.0, s in 0.0f64..2.0, ds in 0.0f64..1.0, seed in any::<u64>()) {
        use rand::Rng;
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<Complex<f64>> = (0..2 * n + 1).map(|_| Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let lo = sobolev_norm(&SobolevWeight::new(s, eps, k, n), &c).unwrap();
        let hi = sobolev_norm(&SobolevWeight::new(s + ds, eps, k, n), &c).unwrap();
        prop_assert!(hi >= lo * (1.0 - 1e-14));
    }

    #[test]
    fn eigenvectors_are_biorthogonal(k1 in 1i64..=3, eps in 0.05f64..0.5) {
        let b = assemble_torus_block((k1, 0), eps, 16).unwrap();
        let pairs = eig_dense(&b).unwrap();
        for (i, p) in pairs.iter().enumerate().take(6) {
            for q in pairs.iter().skip(i + 1).take(6) {
                let dot: c64 = p.left.iter().zip(&q.right).map(|(a, b)| a * b).sum();
                prop_assert!(dot.norm() < 1e-8, "{}", dot);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn leading_eigenvalues_stable_under_truncation_doubling(k1 in 1i64..=2, eps in 0.05f64..0.3) {
        let n = default_truncation(eps);
        let a = eigenvalues_dense(&assemble_torus_block((k1, 0), eps, n).unwrap()).unwrap();
        let b = eigenvalues_dense(&assemble_torus_block((k1, 0), eps, 2 * n).unwrap()).unwrap();
        for la in a.iter().take(5) {
            let d = b.iter().map(|lb| (la - lb).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(d < 1e-8, "{}: {:e}", la, d);
        }
    }

    #[test]
    fn projector_trace_stable_under_node_doubling(eps in 0.05f64..0.3) {
        let b = assemble_torus_block((1, 0), eps, 24).unwrap();
        let lead = eigenvalues_dense(&b).unwrap()[0];
        let p = contour_projector(&b, lead, 0.02, 64);
        prop_assume!(p.is_ok());
        let p = p.unwrap();
        let q = contour_projector(&b, lead, 0.02, 128).unwrap();
        prop_assert!((p.trace - q.trace).norm() < 1e-8);
        prop_assert_eq!(p.rank, q.rank);
    }

    #[test]
    fn kinetic_paths_keep_unit_speed_and_replay(m in models(), z in chart_point(), a in 0.0f64..6.3, seed in any::<u64>(), eps in 0.0f64..2.0) {
        let zeta = unit_covector(&m, &z, a);
        let model = SdeModel::Surface(m);
        let run = || {
            let mut rng = path_rng(seed, 0);
            let mut s = PathState::surface(z, zeta, 0);
            for _ in 0..200 {
                let xi = draw_increments(&mut rng, model.noise_dim(), 1, &mut s);
                match step(&model, &s, 0.01, eps, &xi) {
                    Ok(next) => s = next,
                    Err(_) => return None,
                }
            }
            Some(s)
        };
        let (x, y) = (run(), run());
        prop_assume!(x.is_some());
        let (x, y) = (x.unwrap(), y.unwrap());
        prop_assert_eq!(&x, &y);
        prop_assert!(x.speed_defect(&model).unwrap() < 1e-12);
    }
}
