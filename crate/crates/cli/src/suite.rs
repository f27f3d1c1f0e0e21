//! The default acceptance run: a fixed set of sub-runs and the criteria read off their checks.

use crate::artifacts::{ArtifactWriter, CheckResult, Manifest, OutputEntry};
use crate::commands::{Outcome, RunError, RunResult};
use crate::config::{FrameBaseSpec, ObservableSpec, RunConfig, Scale, SimulateMode, Subcommand};
use crate::golden::{compare_dirs, Tolerance, DIFF_REPORT};
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub subcommand: Subcommand,
    pub config: RunConfig,
}

#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: u8,
    pub title: &'static str,
    /// `(run, check)`; a check ending in `/` matches every check with that prefix.
    pub checks: Vec<(&'static str, &'static str)>,
    /// Runtime budget for the listed runs together, in seconds.
    pub budget: Option<f64>,
}

fn momenta(radius: i64) -> Vec<[i64; 2]> {
    let mut k = Vec::new();
    for a in -radius..=radius {
        for b in -radius..=radius {
            if a * a + b * b <= radius * radius {
                k.push([a, b]);
            }
        }
    }
    k
}

pub fn suite(scale: Scale) -> Vec<SuiteEntry> {
    let quick = scale == Scale::Quick;
    let base = RunConfig::default();
    let mut out = Vec::new();

    let mut c = base.clone();
    c.seed = 7;
    c.calculus.trials = if quick { 10 } else { 50 };
    c.calculus.bases = vec![FrameBaseSpec::FlatTorus, FrameBaseSpec::Sphere, FrameBaseSpec::Revolution, FrameBaseSpec::Euclidean3];
    c.calculus.nash_divergence = true;
    out.push(SuiteEntry { name: "calculus", subcommand: Subcommand::VerifyCalculus, config: c });

    let mut c = base.clone();
    c.k = vec![[0, 0]];
    c.eps = vec![0.01, 0.1, 1.0];
    c.truncation = Some(64);
    out.push(SuiteEntry { name: "spectrum-k0", subcommand: Subcommand::Spectrum, config: c });

    let mut c = base.clone();
    c.k = momenta(if quick { 2 } else { 4 });
    c.eps = if quick { vec![1e-2, 1e-1] } else { vec![1e-3, 1e-2, 1e-1] };
    c.spectrum.vectors = false;
    out.push(SuiteEntry { name: "spectrum-all", subcommand: Subcommand::Spectrum, config: c });

    let mut c = base.clone();
    c.eps = vec![0.1];
    c.truncation = Some(64);
    c.project.radius = Some(0.1);
    out.push(SuiteEntry { name: "project", subcommand: Subcommand::Project, config: c });

    let mut c = base.clone();
    c.eps = vec![1e-2];
    c.truncation = Some(128);
    out.push(SuiteEntry { name: "perturb", subcommand: Subcommand::Perturb, config: c });

    let mut c = base.clone();
    c.grid.max = 1e-1;
    c.grid.min = if quick { 10f64.powf(-2.5) } else { 1e-3 };
    c.grid.ratio = 10f64.powf(-0.25);
    out.push(SuiteEntry { name: "probe", subcommand: Subcommand::Probe, config: c });

    let mut c = base.clone();
    c.seed = 2024;
    c.eps = if quick { vec![1.0] } else { vec![0.5, 1.0, 2.0] };
    c.simulate.paths = if quick { 500 } else { 10_000 };
    c.simulate.horizon = if quick { 2.0 } else { 10.0 };
    c.simulate.sample_dt = 0.5;
    c.simulate.coarsen = 2;
    c.simulate.dt_halving = true;
    out.push(SuiteEntry { name: "msd", subcommand: Subcommand::Simulate, config: c });

    let decay = |seed: u64, f: ObservableSpec, rel: f64| {
        let mut c = base.clone();
        c.seed = seed;
        c.eps = vec![0.5];
        c.simulate.mode = SimulateMode::Decay;
        c.simulate.f = Some(f);
        c.simulate.paths = if quick { 4000 } else { 10_000 };
        c.simulate.horizon = 20.0;
        c.tolerances.decay_rel = rel;
        c
    };
    out.push(SuiteEntry { name: "fiber", subcommand: Subcommand::Simulate, config: decay(11, ObservableSpec::CosTheta, 0.05) });
    out.push(SuiteEntry { name: "mixing", subcommand: Subcommand::Simulate, config: decay(12, ObservableSpec::CosX1CosTheta, 0.3) });

    let mut c = base.clone();
    c.seed = 5;
    c.simulate.mode = SimulateMode::Deviation;
    c.simulate.horizon = 1.0;
    c.simulate.paths = if quick { 200 } else { 2000 };
    c.simulate.dt = if quick { 1e-2 } else { 1e-3 };
    c.simulate.sample_dt = c.simulate.dt;
    out.push(SuiteEntry { name: "deviation", subcommand: Subcommand::Simulate, config: c });
    out
}

pub fn criteria() -> Vec<Criterion> {
    let cr = |id, title, checks: &[(&'static str, &'static str)], budget| Criterion { id, title, checks: checks.to_vec(), budget };
    vec![
        cr(1, "frame-calculus commutation identities, d = 2 and 3", &[("calculus", "commutation/")], Some(10.0)),
        cr(2, "lifted fiber Laplacian on harmonics of degree <= 4", &[("calculus", "intertwining/")], None),
        cr(3, "Nash sum of squares and divergence-free fields", &[("calculus", "nash-sos/"), ("calculus", "nash-divergence/")], None),
        cr(4, "exact k = 0 spectrum -iεn²", &[("spectrum-k0", "exact-diagonal")], None),
        cr(5, "cross-block symmetry and Im λ <= 0 for |k| <= 4", &[("spectrum-all", "semibounded"), ("spectrum-all", "mirror")], Some(60.0)),
        cr(
            6,
            "contour projector: idempotent, trace, rank one, Richardson ratio",
            &[("project", "idempotency"), ("project", "trace"), ("project", "rank"), ("project", "rank-one"), ("project", "richardson")],
            None,
        ),
        cr(7, "first-order eigenvalue slope vs central differences", &[("perturb", "slope-residual"), ("perturb", "fd-convergence")], None),
        cr(8, "mirror spectrum under ε -> -ε", &[("spectrum-k0", "conjugation"), ("spectrum-all", "conjugation")], None),
        cr(9, "hypoelliptic constant slope and s = 0 control", &[("probe", "probe-slope"), ("probe", "control-slope"), ("probe", "shell-range")], Some(300.0)),
        cr(10, "flat MSD against the closed form, dt halving", &[("msd", "msd/"), ("msd", "dt-shift/")], None),
        cr(11, "fiber relaxation rate of cos θ equals ε", &[("fiber", "decay-rate")], None),
        cr(12, "geodesic deviation exponent", &[("deviation", "deviation-exponent")], None),
        cr(13, "mixed observable decays at the spectral gap", &[("mixing", "decay-rate")], None),
    ]
}

fn matches(pattern: &str, name: &str) -> bool {
    match pattern.strip_suffix('/') {
        Some(p) => name.strip_prefix(p).is_some_and(|r| r.starts_with('/')),
        None => name == pattern,
    }
}

/// Evaluates a criterion against sub-run manifests keyed by run name.
pub fn evaluate(c: &Criterion, runs: &[(&str, &Manifest)]) -> CheckResult {
    let mut passed = true;
    let mut parts = Vec::new();
    for (run, pat) in &c.checks {
        let Some((_, m)) = runs.iter().find(|(n, _)| n == run) else {
            passed = false;
            parts.push(format!("{run}: not run"));
            continue;
        };
        let hits: Vec<&CheckResult> = m.checks.iter().filter(|ch| matches(pat, &ch.name)).collect();
        if hits.is_empty() {
            passed = false;
            parts.push(format!("{run}/{pat}: missing{}", m.error.as_ref().map(|e| format!(" ({e})")).unwrap_or_default()));
        }
        for h in hits {
            passed &= h.passed;
            let v = h.value.map_or(String::new(), |v| format!(" = {v:.4e}"));
            parts.push(format!("{}{v} {} [{}]", h.name, h.limit, if h.passed { "ok" } else { "FAIL" }));
        }
    }
    CheckResult::flag(&format!("criterion-{:02}", c.id), passed, parts.join("; "))
}

#[derive(Serialize)]
struct RunRecord<'a> {
    name: &'a str,
    subcommand: &'a str,
    exit_code: i32,
    error: &'a Option<String>,
    checks: &'a [CheckResult],
}

pub fn golden(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    let entries = suite(cfg.golden.scale);
    let root = w.root().to_path_buf();
    let mut manifests = Vec::new();
    for e in &entries {
        let m = crate::run(e.subcommand, &e.config, &root.join(e.name)).map_err(RunError::Io)?;
        for o in &m.outputs {
            w.adopt(OutputEntry { path: format!("{}/{}", e.name, o.path), ..o.clone() });
        }
        manifests.push((e.name, m));
    }
    let runs: Vec<(&str, &Manifest)> = manifests.iter().map(|(n, m)| (*n, m)).collect();
    let mut out = Outcome::default();
    for c in criteria() {
        out.checks.push(evaluate(&c, &runs));
    }
    for (n, m) in &runs {
        out.residuals.push((format!("elapsed/{n}"), Some(m.elapsed_seconds)));
    }
    let records: Vec<RunRecord> = runs
        .iter()
        .zip(&entries)
        .map(|((n, m), e)| RunRecord { name: n, subcommand: e.subcommand.as_str(), exit_code: m.exit_code, error: &m.error, checks: &m.checks })
        .collect();
    w.json("suite.json", "acceptance-suite", &serde_json::json!({ "runs": records }))?;
    if let Some(reference) = &cfg.golden.reference {
        let tol = Tolerance { abs: cfg.golden.abs, rel: cfg.golden.rel };
        match compare_dirs(&root, reference, tol) {
            Ok(reports) => {
                let diffs: usize = reports.iter().map(|r| r.entries.len()).sum();
                let compared: usize = reports.iter().map(|r| r.compared).sum();
                w.json(DIFF_REPORT, "golden-diff", &serde_json::json!({ "files": reports }))?;
                out.checks.push(CheckResult::flag(
                    "golden-match",
                    diffs == 0,
                    format!("{diffs} differences over {compared} values in {} files", reports.len()),
                ));
            }
            Err(e) => out.checks.push(CheckResult::flag("golden-match", false, e.to_string())),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn momenta_cover_the_disk() {
        assert_eq!(momenta(4).len(), 49);
        assert!(momenta(1).contains(&[0, -1]));
    }

    #[test]
    fn prefix_patterns_match_whole_segments() {
        assert!(matches("msd/", "msd/eps=0.5"));
        assert!(!matches("msd/", "msdx/eps=0.5"));
        assert!(matches("trace", "trace"));
        assert!(!matches("rank", "rank-one"));
    }

    #[test]
    fn suite_configs_validate() {
        for s in [Scale::Full, Scale::Quick] {
            for e in suite(s) {
                e.config.validate().unwrap_or_else(|err| panic!("{}: {err}", e.name));
            }
        }
        let names: Vec<&str> = suite(Scale::Full).iter().map(|e| e.name).collect();
        for c in criteria() {
            for (run, _) in &c.checks {
                assert!(names.contains(run), "{run}");
            }
        }
    }
}
