//! Runs the default golden suite twice, on one and on two worker threads, and prints one
//! PASS/FAIL line per acceptance criterion. `KSPEC_ACCEPTANCE_SCALE=quick` selects the
//! reduced suite for local iteration.

use kspec::artifacts::{verify_manifest, Manifest};
use kspec::config::{RunConfig, Scale, Subcommand};
use kspec::suite::criteria;
use kspec::{run, with_threads};
use std::process::ExitCode;

const WALL_BUDGET: f64 = 600.0;

fn elapsed(m: &Manifest, run: &str) -> Option<f64> {
    let key = format!("elapsed/{run}");
    m.residuals.iter().find(|(k, _)| *k == key).and_then(|(_, v)| *v)
}

fn main() -> ExitCode {
    let scale = match std::env::var("KSPEC_ACCEPTANCE_SCALE").as_deref() {
        Ok("quick") => Scale::Quick,
        _ => Scale::Full,
    };
    let mut cfg = RunConfig::default();
    cfg.golden.scale = scale;

    let dirs = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    let mut manifests = Vec::new();
    for (dir, threads) in dirs.iter().zip([1, 2]) {
        match with_threads(Some(threads), || run(Subcommand::Golden, &cfg, dir.path())) {
            Ok(m) => manifests.push(m),
            Err(e) => {
                println!("FAIL golden suite on {threads} thread(s): {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    let (a, b) = (&manifests[0], &manifests[1]);

    let mut failed = 0;
    let mut report = |id: u8, title: &str, ok: bool, detail: String| {
        if !ok {
            failed += 1;
        }
        println!("{} criterion {id:2}: {title}: {detail}", if ok { "PASS" } else { "FAIL" });
    };

    for c in criteria() {
        let name = format!("criterion-{:02}", c.id);
        let (Some(ca), Some(cb)) = (a.check(&name), b.check(&name)) else {
            report(c.id, c.title, false, "not evaluated".into());
            continue;
        };
        let mut ok = ca.passed && cb.passed;
        let mut detail = ca.detail.clone();
        if ca.passed != cb.passed {
            detail.push_str("; differs between thread counts");
        }
        if let Some(budget) = c.budget {
            let mut runs: Vec<&str> = c.checks.iter().map(|(r, _)| *r).collect();
            runs.dedup();
            let worst = [a, b]
                .iter()
                .map(|m| runs.iter().map(|r| elapsed(m, r).unwrap_or(f64::INFINITY)).sum::<f64>())
                .fold(0.0, f64::max);
            ok &= worst < budget;
            detail.push_str(&format!("; runtime {worst:.1} s (< {budget} s)"));
        }
        report(c.id, c.title, ok, detail);
    }

    let digests = |m: &Manifest| m.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())).collect::<Vec<_>>();
    let identical = digests(a) == digests(b);
    let intact = dirs.iter().all(|d| verify_manifest(d.path()).is_ok_and(|bad| bad.is_empty()));
    let slowest = a.elapsed_seconds.max(b.elapsed_seconds);
    report(
        14,
        "full golden suite reproducible and within the wall-clock budget",
        identical && intact && slowest < WALL_BUDGET,
        format!(
            "{} artifacts, {} across 1 and 2 threads, manifests {}, {slowest:.1} s per run (< {WALL_BUDGET} s)",
            a.outputs.len(),
            if identical { "bit-identical" } else { "different" },
            if intact { "verified" } else { "corrupt" },
        ),
    );

    println!("acceptance: {} of 14 criteria passed", 14 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
