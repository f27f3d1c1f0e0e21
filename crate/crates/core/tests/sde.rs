use kspec_core::geometry::ManifoldModel;
use kspec_core::kinetic_sde::*;

fn msd_run(eps: f64, dt: f64, coarsen: usize, paths: usize) -> EnsembleStats {
    let mut cfg = EnsembleConfig::flat(eps, dt, 10.0, paths, 2024);
    cfg.sample_every = ((0.5 / dt).round() as usize).max(1);
    cfg.coarsen = coarsen;
    simulate_ensemble(&cfg).unwrap()
}

#[test]
fn flat_msd_matches_closed_form_and_is_dt_stable() {
    for eps in [0.5, 1.0, 2.0] {
        let a = msd_run(eps, 0.01, 2, 10_000);
        let b = msd_run(eps, 0.005, 1, 10_000);
        assert_eq!(a.times, b.times);
        let mut worst: f64 = 0.0;
        let mut shift: f64 = 0.0;
        for i in 1..a.times.len() {
            let r = msd_reference_flat(eps, a.times[i]).unwrap();
            worst = worst.max((a.msd[i] - r).abs() / a.msd_se[i]);
            shift = shift.max((a.msd[i] - b.msd[i]).abs() / a.msd_se[i]);
        }
        println!("ε = {eps}: max |MSD − ref|/SE = {worst:.3}, dt-halving shift/SE = {shift:.3e}");
        assert!(worst < 3.0);
        assert!(shift < 1.0);
        assert!(a.max_speed_defect < 1e-12);
    }
}

#[test]
fn deterministic_under_seed() {
    let mut cfg = EnsembleConfig::flat(1.0, 0.01, 2.0, 200, 9);
    cfg.blocks = 40;
    let a = simulate_ensemble(&cfg).unwrap();
    let b = simulate_ensemble(&cfg).unwrap();
    assert_eq!(a, b);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = pool.install(|| simulate_ensemble(&cfg).unwrap());
    assert_eq!(a, c);
}

#[test]
fn noiseless_ensemble_has_no_spread() {
    let mut cfg = EnsembleConfig::flat(0.0, 0.01, 2.0, 200, 9);
    cfg.blocks = 40;
    cfg.initial = Initial::Fixed { z: [0.0, 0.0], theta: 0.3 };
    let s = simulate_ensemble(&cfg).unwrap();
    assert!(s.msd_se.iter().zip(&s.msd).all(|(e, m)| *e <= 1e-14 * m.max(1.0)));
    assert!((s.msd.last().unwrap() - 4.0).abs() < 1e-12);
}

#[test]
fn too_few_paths_is_rejected() {
    assert!(simulate_ensemble(&EnsembleConfig::flat(1.0, 0.01, 1.0, 50, 1)).is_err());
}

#[test]
fn fiber_relaxation_rate_is_eps() {
    let r = correlation_decay(&DecayConfig::new(0.5, Observable::cos_theta(), 20.0, 10_000, 11)).unwrap();
    println!("cos θ: {:?}, gap {}", r.fit, r.gap);
    assert!((r.gap - 0.5).abs() < 1e-12);
    assert!((r.fit.rate - 0.5).abs() <= 0.05 * 0.5);
}

#[test]
fn mixed_observable_decays_at_the_gap() {
    let r = correlation_decay(&DecayConfig::new(0.5, Observable::cos_x1_cos_theta(), 20.0, 10_000, 12)).unwrap();
    println!("cos x1 cos θ: {:?}, gap {}", r.fit, r.gap);
    assert!((r.gap - 0.324949520193038802).abs() < 1e-9);
    assert!((r.fit.rate - r.gap).abs() <= 0.3 * r.gap);
}

#[test]
fn unitary_flow_decay_is_refused() {
    let mut cfg = DecayConfig::new(0.0, Observable::cos_x1(), 20.0, 2_000, 13);
    cfg.origins = 5;
    let e = correlation_decay(&cfg).unwrap_err();
    assert!(matches!(e, kspec_core::Error::Refused(_)), "{e}");
}

#[test]
fn geodesic_deviation_scales_like_sqrt_eps() {
    let eps: Vec<f64> = (0..5).map(|i| 1e-4 * 10f64.powf(i as f64 / 2.0)).collect();
    let r = geodesic_deviation(&DeviationConfig { eps, horizon: 1.0, paths: 2000, dt: 1e-3, seed: 5, coarsen: 1 }).unwrap();
    println!("deviation {:?} exponent {:?}", r.median, r.exponent);
    let x = r.exponent.unwrap();
    assert!((0.4..=0.6).contains(&x));
}

#[test]
fn deviation_is_zero_without_noise_and_refines() {
    let r = geodesic_deviation(&DeviationConfig { eps: vec![0.0], horizon: 1.0, paths: 100, dt: 1e-2, seed: 5, coarsen: 1 }).unwrap();
    assert!(r.median[0] < 1e-14);
    let coarse = geodesic_deviation(&DeviationConfig { eps: vec![1e-2], horizon: 1.0, paths: 1000, dt: 1e-2, seed: 5, coarsen: 10 }).unwrap();
    let fine = geodesic_deviation(&DeviationConfig { eps: vec![1e-2], horizon: 1.0, paths: 1000, dt: 1e-3, seed: 5, coarsen: 1 }).unwrap();
    println!("coarse {} fine {}", coarse.median[0], fine.median[0]);
    assert!((coarse.median[0] / fine.median[0] - 1.0).abs() < 0.05);
}

#[test]
fn sphere_paths_keep_unit_speed() {
    let mut cfg = EnsembleConfig::flat(1.0, 0.01, 5.0, 100, 3);
    cfg.model = SdeModel::Surface(ManifoldModel::Sphere2);
    cfg.blocks = 30;
    cfg.initial = Initial::Fixed { z: [1.2, 0.0], theta: 0.4 };
    let s = simulate_ensemble(&cfg).unwrap();
    assert!(s.max_speed_defect < 1e-12, "{}", s.max_speed_defect);
}
