pub mod artifacts;
pub mod commands;
pub mod config;
pub mod golden;
pub mod suite;

use artifacts::{sha256_hex, verify_manifest, write_atomic, ArtifactWriter, Manifest, MANIFEST, SCHEMA};
use commands::{RunError, RunResult};
use config::{RunConfig, Subcommand};
use std::path::Path;
use std::time::Instant;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const DEFAULT_OUTPUT: &str = "kspec-out";

/// The config as recorded with the artifacts: the subcommand pinned and the output
/// directory dropped, so reruns elsewhere produce identical bytes.
pub fn resolved_config(sub: Subcommand, cfg: &RunConfig) -> RunConfig {
    RunConfig { subcommand: Some(sub), output: None, ..cfg.clone() }
}

pub fn execute(sub: Subcommand, cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    match sub {
        Subcommand::Spectrum => commands::spectrum(cfg, w),
        Subcommand::Sweep => commands::sweep_cmd(cfg, w),
        Subcommand::Perturb => commands::perturb(cfg, w),
        Subcommand::Project => commands::project(cfg, w),
        Subcommand::Probe => commands::probe(cfg, w),
        Subcommand::Simulate => commands::simulate(cfg, w),
        Subcommand::VerifyCalculus => commands::verify_calculus(cfg, w),
        Subcommand::Golden => suite::golden(cfg, w),
    }
}

/// Runs one subcommand into `out`, writing artifacts atomically and the manifest last.
/// The manifest is written whatever the outcome; its digests are verified before returning.
pub fn run(sub: Subcommand, cfg: &RunConfig, out: &Path) -> std::io::Result<Manifest> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let mut w = ArtifactWriter::new(out)?;
    let resolved = config::to_toml(&resolved_config(sub, cfg));
    w.write("config.toml", resolved.as_bytes())?;
    let result = match cfg.validate() {
        Ok(()) => execute(sub, cfg, &mut w),
        Err(e) => Err(RunError::Config(e.0)),
    };
    let (exit_code, error, checks, residuals) = match result {
        Ok(o) => {
            let code = if o.checks.iter().all(|c| c.passed) { EXIT_PASS } else { EXIT_CHECK };
            (code, None, o.checks, o.residuals)
        }
        Err(e) => {
            let code = match e {
                RunError::Config(_) | RunError::Io(_) => EXIT_USAGE,
                RunError::Numerical(_) => EXIT_NUMERICAL,
            };
            (code, Some(e.to_string()), Vec::new(), Vec::new())
        }
    };
    let manifest = Manifest {
        schema: SCHEMA,
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: sub.as_str().into(),
        config_sha256: sha256_hex(resolved.as_bytes()),
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        elapsed_seconds: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        exit_code,
        error,
        residuals,
        checks,
        outputs: w.outputs().to_vec(),
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_atomic(&out.join(MANIFEST), &bytes)?;
    let bad = verify_manifest(out)?;
    if !bad.is_empty() {
        return Err(std::io::Error::other(format!("digest mismatch after write: {bad:?}")));
    }
    Ok(manifest)
}

/// Thread count from `KSPEC_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>, String> {
    match std::env::var("KSPEC_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(format!("KSPEC_THREADS: expected a positive integer, got {v:?}")),
        },
    }
}

/// Runs `f` on a pool capped at `threads`, or on the global pool when `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool").install(f),
    }
}
