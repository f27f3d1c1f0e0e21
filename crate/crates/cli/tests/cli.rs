use kspec::artifacts::{verify_manifest, Manifest};
use kspec::golden::{compare_dirs, Tolerance};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn kspec(args: &[&str], config: Option<&str>, threads: Option<&str>) -> (Output, TempDir) {
    let dir = TempDir::new().unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kspec"));
    cmd.args(args).arg("-o").arg(dir.path().join("out"));
    if let Some(text) = config {
        let p = dir.path().join("run.toml");
        std::fs::write(&p, text).unwrap();
        cmd.arg("-c").arg(p);
    }
    match threads {
        Some(t) => cmd.env("KSPEC_THREADS", t),
        None => cmd.env_remove("KSPEC_THREADS"),
    };
    (cmd.output().unwrap(), dir)
}

fn out(dir: &TempDir) -> PathBuf {
    dir.path().join("out")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn digests(dir: &Path) -> Vec<(String, String)> {
    Manifest::read(dir).unwrap().outputs.into_iter().map(|o| (o.path, o.sha256)).collect()
}

#[test]
fn verify_calculus_defaults_pass() {
    let (o, d) = kspec(&["verify-calculus"], None, None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out(&d).join("calculus.json").exists());
    assert!(verify_manifest(&out(&d)).unwrap().is_empty());
    let m = Manifest::read(&out(&d)).unwrap();
    assert_eq!(m.exit_code, 0);
    assert!(m.check("commutation/sphere").is_some_and(|c| c.passed));
}

#[test]
fn empty_sweep_window_is_a_usage_error() {
    let cfg = "subcommand = \"sweep\"\n[window]\ncenter = [50.0, 50.0]\nradius = 0.1\n";
    let (o, d) = kspec(&["sweep"], Some(cfg), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("window"), "{}", stderr(&o));
    let m = Manifest::read(&out(&d)).unwrap();
    assert_eq!(m.exit_code, 1);
    assert!(m.error.is_some());
}

#[test]
fn bad_config_lists_every_error() {
    let cfg = "bogus = 1\neps = [-1.0]\n[grid]\nratio = 2.0\n[tolerances]\nmirror = \"small\"\n";
    let (o, d) = kspec(&["sweep"], Some(cfg), None);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("bogus: unknown key"), "{e}");
    assert!(e.contains("mirror") || e.contains("invalid type"), "{e}");
    assert!(!out(&d).exists());

    let cfg = "bogus = 1\neps = [-1.0]\n[grid]\nratio = 2.0\n";
    let (o, _d) = kspec(&["sweep"], Some(cfg), None);
    let e = stderr(&o);
    assert_eq!(e.lines().filter(|l| l.starts_with("config error:")).count(), 3, "{e}");
    assert!(e.contains("grid.ratio"), "{e}");
}

#[test]
fn subcommand_mismatch_is_rejected() {
    let (o, _d) = kspec(&["probe"], Some("subcommand = \"spectrum\"\n"), None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("subcommand"));
}

#[test]
fn invalid_thread_count_is_a_usage_error() {
    let (o, _d) = kspec(&["spectrum"], None, Some("zero"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("KSPEC_THREADS"));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let cases = [
        ("spectrum", "k = [[1, 0], [-1, 0], [2, 1], [0, 0]]\neps = [0.05, 0.1]\n"),
        ("simulate", "seed = 9\neps = [1.0]\n[simulate]\npaths = 300\nhorizon = 1.0\n"),
    ];
    for (sub, cfg) in cases {
        let (a, da) = kspec(&[sub], Some(cfg), Some("1"));
        let (b, db) = kspec(&[sub], Some(cfg), Some("2"));
        let (c, dc) = kspec(&[sub], Some(cfg), Some("2"));
        for o in [&a, &b, &c] {
            assert_eq!(o.status.code(), Some(0), "{sub}: {}", stderr(o));
        }
        let first = digests(&out(&da));
        assert!(!first.is_empty());
        assert_eq!(first, digests(&out(&db)), "{sub}");
        assert_eq!(first, digests(&out(&dc)), "{sub}");
    }
}

#[test]
fn seed_override_changes_sample_paths() {
    let cfg = "eps = [1.0]\n[simulate]\npaths = 100\nhorizon = 0.5\n";
    let (_, a) = kspec(&["simulate", "--seed", "1"], Some(cfg), None);
    let (_, b) = kspec(&["simulate", "--seed", "2"], Some(cfg), None);
    let pick = |d: &TempDir| digests(&out(d)).into_iter().find(|(p, _)| p.starts_with("simulate-")).unwrap();
    assert_ne!(pick(&a), pick(&b));
}

#[test]
fn outputs_match_the_frozen_golden_files() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let tol = Tolerance { abs: 1e-12, rel: 1e-9 };
    let mut cases: Vec<PathBuf> = std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).collect();
    cases.sort();
    assert!(cases.len() >= 3);
    for case in cases {
        let cfg = std::fs::read_to_string(case.join("config.toml")).unwrap();
        let sub = cfg.lines().find_map(|l| l.strip_prefix("subcommand = ")).unwrap().trim_matches('"').to_string();
        let (o, d) = kspec(&[&sub], Some(&cfg), None);
        assert_eq!(o.status.code(), Some(0), "{}: {}", case.display(), stderr(&o));
        let reports = compare_dirs(&out(&d), &case, tol).unwrap();
        assert!(!reports.is_empty());
        for r in reports {
            assert!(r.compared > 0 && r.is_empty(), "{}: {:?}", case.display(), r);
        }
        let resolved = std::fs::read_to_string(out(&d).join("config.toml")).unwrap();
        assert_eq!(resolved, cfg, "{}", case.display());
    }
}

#[test]
fn quick_golden_run_reproduces_itself() {
    let (a, da) = kspec(&["golden"], Some("[golden]\nscale = \"quick\"\n"), Some("1"));
    assert!(matches!(a.status.code(), Some(0 | 2)), "{}", stderr(&a));
    let reference = out(&da);
    let cfg = format!("[golden]\nscale = \"quick\"\nreference = {:?}\n", reference.to_str().unwrap());
    let (b, db) = kspec(&["golden"], Some(&cfg), Some("2"));
    assert_eq!(a.status.code(), b.status.code(), "{}", stderr(&b));
    let mb = Manifest::read(&out(&db)).unwrap();
    let m = mb.check("golden-match").expect("golden-match check");
    assert!(m.passed, "{}", m.detail);
    let strip = |v: Vec<(String, String)>| v.into_iter().filter(|(p, _)| p != "config.toml" && p != "golden-diff.json").collect::<Vec<_>>();
    assert_eq!(strip(digests(&reference)), strip(digests(&out(&db))));
    assert!(verify_manifest(&out(&db)).unwrap().is_empty());
    for id in 1..=13 {
        assert!(mb.check(&format!("criterion-{id:02}")).is_some(), "criterion {id}");
    }
}
