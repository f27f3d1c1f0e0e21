use clap::Parser;
use kspec::config::{parse_config, RunConfig, Subcommand};
use kspec::{run, threads_from_env, with_threads, DEFAULT_OUTPUT, EXIT_USAGE};
use std::path::PathBuf;
use std::process::ExitCode;

/// Spectra, eigenvalue sweeps and sample paths for kinetic Brownian motion on the torus
/// and surfaces.
///
/// Exit status: 0 all checks passed, 1 usage or config error, 2 a check failed,
/// 3 numerical failure. `KSPEC_THREADS` caps the worker threads.
#[derive(Parser, Debug)]
#[command(name = "kspec", version)]
struct Cli {
    #[arg(value_enum)]
    command: Subcommand,
    /// TOML run configuration; every field has a default.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn load(cli: &Cli) -> Result<RunConfig, Vec<String>> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| vec![format!("{}: {e}", p.display())])?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text).map_err(|e| e.0)?;
    if let Some(s) = cfg.subcommand {
        if s != cli.command {
            return Err(vec![format!("subcommand: config is for `{s}`, invoked as `{}`", cli.command)]);
        }
    }
    if let Some(o) = &cli.output {
        cfg.output = Some(o.clone());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_USAGE as u8);
        }
        Err(e) => e.exit(),
    };
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(errs) => {
            for e in errs {
                eprintln!("config error: {e}");
            }
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    if cli.print_config {
        print!("{}", kspec::config::to_toml(&kspec::resolved_config(cli.command, &cfg)));
        return ExitCode::SUCCESS;
    }
    let threads = match threads_from_env() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    };
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    match with_threads(threads, || run(cli.command, &cfg, &out)) {
        Ok(m) => {
            for c in &m.checks {
                let v = c.value.map_or(String::new(), |v| format!(" {v:.6e} ({})", c.limit));
                let line = format!("{} {}{v} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                println!("{}", line.trim_end());
            }
            if let Some(e) = &m.error {
                eprintln!("{}: {e}", cli.command);
            }
            println!("{} artifacts in {} ({:.1} s)", m.outputs.len(), out.display(), m.elapsed_seconds);
            ExitCode::from(m.exit_code as u8)
        }
        Err(e) => {
            eprintln!("{}: {e}", out.display());
            ExitCode::from(EXIT_USAGE as u8)
        }
    }
}
