use kspec_core::sweep_analysis::*;

fn grid() -> Vec<f64> {
    (0..9).map(|i| 1e-1 * 10f64.powf(-(i as f64) / 4.0)).collect()
}

#[test]
fn unit_eps_constant_is_finite() {
    let cfg = ProbeConfig { eps: vec![1.0, 0.1, 0.03], shell: 1.2, truncation: Truncation::Fixed(64), ..ProbeConfig::new(vec![], 2.0 / 3.0) };
    let r = hypoelliptic_probe(&cfg).unwrap();
    assert_eq!(r.k[0], (1, 0));
    assert!(r.constant[0].is_finite() && r.constant[0] > 0.0);
}

#[test]
fn l2_control_is_bounded() {
    let r = hypoelliptic_probe(&ProbeConfig::new(grid(), 0.0)).unwrap();
    println!("s=0 constants {:?} slope {:?}", r.constant, r.fit);
    assert!(r.fit.slope.abs() <= 0.1);
    assert!(r.constant.iter().all(|c| *c > 0.0 && *c <= 1.0 + 1e-12));
}

#[test]
fn probe_constant_is_monotone_in_eps() {
    let r = hypoelliptic_probe(&ProbeConfig::new(grid(), 2.0 / 3.0)).unwrap();
    println!("s=2/3 constants {:?}\nfit {:?}\nshell {:?}\nshell fit {:?}", r.constant, r.fit, r.shell_constant, r.shell_fit);
    // ε decreases along the grid, so c(ε) should not decrease (5% noise).
    for w in r.constant.windows(2) {
        assert!(w[1] >= 0.95 * w[0]);
    }
}

#[test]
fn short_grid_is_rejected() {
    assert!(hypoelliptic_probe(&ProbeConfig::new(vec![0.1, 0.05, 0.02], 0.0)).is_err());
}
