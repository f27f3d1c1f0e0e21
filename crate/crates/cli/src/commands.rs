//! Subcommand bodies. Each computes its results, writes artifacts through the run's
//! [`ArtifactWriter`] and returns the checks it evaluated.

use crate::artifacts::{ArtifactWriter, Cell, CheckResult};
use crate::config::{FrameBaseSpec, ModelSpec, ObservableSpec, RunConfig, SimulateMode};
use kspec_core::frame_calculus::{nash_fields, verify_commutation_suite, verify_intertwining_with, FrameBase, SuiteOptions};
use kspec_core::geometry::{ManifoldModel, Profile};
use kspec_core::kinetic_sde::{
    correlation_decay, geodesic_deviation, msd_reference_flat, simulate_ensemble, CorrelationSpec, DecayConfig, DeviationConfig,
    EnsembleConfig, EnsembleStats, Initial, Observable, SdeModel,
};
use kspec_core::operator_assembly::{assemble_torus_block, default_truncation, SpectralBlock};
use kspec_core::spectral_engine::{
    contour_projector, eig_dense, eigenvalues_dense, frobenius, projector_derivative, leading_distance, shift_invert_arnoldi,
    spectral_order, ArnoldiOptions, EigenPair, MAX_DENSE_DIM,
};
use kspec_core::sweep_analysis::{
    adjoint_defect, branch_rows, extrapolate_all, geometric_grid, hypoelliptic_probe, matched_drift, perturbation_check, sweep,
    BranchStatus, ProbeConfig, SweepConfig, Truncation, Window,
};
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<CheckResult>,
    pub residuals: Vec<(String, Option<f64>)>,
}

impl Outcome {
    fn residual(&mut self, name: impl Into<String>, v: f64) {
        self.residuals.push((name.into(), v.is_finite().then_some(v)));
    }
}

#[derive(Debug)]
pub enum RunError {
    /// Usage or configuration problem (exit 1).
    Config(Vec<String>),
    /// The numerics refused or failed (exit 3).
    Numerical(String),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(v) => write!(f, "{}", v.join("; ")),
            RunError::Numerical(s) => f.write_str(s),
            RunError::Io(e) => write!(f, "i/o: {e}"),
        }
    }
}

impl From<kspec_core::Error> for RunError {
    fn from(e: kspec_core::Error) -> Self {
        use kspec_core::Error as E;
        match e {
            E::Invalid(_) | E::Unsupported(_) | E::Domain { .. } | E::IndexOutOfRange { .. } | E::LengthMismatch { .. } => {
                RunError::Config(vec![e.to_string()])
            }
            _ => RunError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

pub type RunResult = Result<Outcome, RunError>;

fn c(z: [f64; 2]) -> C64 {
    C64::new(z[0], z[1])
}

fn modes(cfg: &RunConfig, eps: f64) -> usize {
    cfg.truncation.unwrap_or_else(|| default_truncation(eps))
}

fn truncation(cfg: &RunConfig) -> Truncation {
    cfg.truncation.map_or(Truncation::Default, Truncation::Fixed)
}

fn torus_only(cfg: &RunConfig, what: &str) -> Result<(), RunError> {
    if cfg.model != ModelSpec::FlatTorus {
        return Err(RunError::Config(vec![format!("model: {what} is implemented for the flat torus only")]));
    }
    Ok(())
}

fn single_eps(cfg: &RunConfig, what: &str) -> Result<f64, RunError> {
    match cfg.eps.as_slice() {
        [e] => Ok(*e),
        _ => Err(RunError::Config(vec![format!("eps: {what} takes exactly one value, got {}", cfg.eps.len())])),
    }
}

fn k_of(cfg: &RunConfig) -> (i64, i64) {
    (cfg.k[0][0], cfg.k[0][1])
}

fn sorted_eigenvalues(block: &SpectralBlock<f64>) -> Result<Vec<C64>, RunError> {
    let mut ev = eigenvalues_dense(block)?;
    ev.sort_by(spectral_order);
    Ok(ev)
}

pub fn spectrum(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    torus_only(cfg, "spectrum")?;
    let tol = &cfg.tolerances;
    let jobs: Vec<((i64, i64), f64)> = cfg.k.iter().flat_map(|k| cfg.eps.iter().map(move |e| ((k[0], k[1]), *e))).collect();
    let solved: Vec<Result<(Vec<EigenPair>, Vec<C64>), RunError>> = jobs
        .par_iter()
        .map(|&(k, eps)| {
            let n = modes(cfg, eps);
            let block = assemble_torus_block(k, eps, n)?;
            if cfg.spectrum.vectors {
                let pairs = if block.dim() <= MAX_DENSE_DIM {
                    eig_dense(&block)?
                } else {
                    let opts = ArnoldiOptions::new(cfg.spectrum.count);
                    shift_invert_arnoldi(&block.matrix, c(cfg.window.center), &opts)?.pairs
                };
                let ev = pairs.iter().map(|p| p.lambda).collect();
                Ok((pairs, ev))
            } else {
                Ok((Vec::new(), sorted_eigenvalues(&block)?))
            }
        })
        .collect();
    let mut spectra = HashMap::new();
    let mut rows = Vec::new();
    let mut out = Outcome::default();
    let (mut max_im, mut max_res, mut exact): (f64, f64, Option<f64>) = (f64::NEG_INFINITY, 0.0, None);
    for (&(k, eps), r) in jobs.iter().zip(solved) {
        let (pairs, ev) = r?;
        let n = modes(cfg, eps);
        for (i, z) in ev.iter().enumerate() {
            let (res, lres, pab) = match pairs.get(i) {
                Some(p) => (Some(p.residual), Some(p.left_residual), Some(p.pairing.norm())),
                None => (None, None, None),
            };
            if let (Some(a), Some(b)) = (res, lres) {
                max_res = max_res.max(a).max(b);
            }
            max_im = max_im.max(z.im);
            rows.push(vec![
                Cell::Int(k.0),
                Cell::Int(k.1),
                eps.into(),
                n.into(),
                i.into(),
                z.re.into(),
                z.im.into(),
                res.into(),
                lres.into(),
                pab.into(),
            ]);
        }
        if k == (0, 0) {
            let want: Vec<C64> = (0..2 * n + 1).map(|i| C64::new(0.0, -eps * ((i as f64) - n as f64).powi(2))).collect();
            let d = matched_drift(&ev, &want);
            exact = Some(exact.map_or(d, |e: f64| e.max(d)));
        }
        spectra.insert((k, eps.to_bits()), ev);
    }
    w.csv(
        "spectrum.csv",
        &["k1", "k2", "eps", "n_modes", "index", "re", "im", "residual", "left_residual", "pairing_abs"],
        &rows,
        &[],
    )?;
    out.checks.push(CheckResult::at_most("semibounded", max_im, tol.imag).with_detail("max Im λ"));
    if cfg.spectrum.vectors {
        out.checks.push(CheckResult::at_most("eigen-residual", max_res, tol.residual));
    }
    if let Some(e) = exact {
        out.checks.push(CheckResult::at_most("exact-diagonal", e, tol.exact).with_detail("max |λ − (−iεn²)| on k = 0"));
    }
    let mut mirror_rows = Vec::new();
    let extra: Vec<_> = jobs
        .par_iter()
        .map(|&(k, eps)| -> Result<_, RunError> {
            let n = modes(cfg, eps);
            // Cached spectra from a shift-invert solve are partial; compare full dense spectra instead.
            let full = |key: (i64, i64)| -> Result<Vec<C64>, RunError> {
                match spectra.get(&(key, eps.to_bits())) {
                    Some(ev) if ev.len() == 2 * n + 1 => Ok(ev.clone()),
                    _ => sorted_eigenvalues(&assemble_torus_block(key, eps, n)?),
                }
            };
            let here = full(k)?;
            let cross = if cfg.spectrum.mirror {
                let a = full((-k.0, -k.1))?;
                let mut b: Vec<C64> = here.iter().map(|z| -z.conj()).collect();
                b.sort_by(spectral_order);
                Some(leading_distance(&a, &b, cfg.spectrum.count))
            } else {
                None
            };
            let conj = if cfg.spectrum.conjugation && eps != 0.0 {
                let plus = assemble_torus_block(k, eps, n)?;
                let minus = assemble_torus_block(k, -eps, n)?;
                let mut a: Vec<C64> = eigenvalues_dense(&minus)?.iter().map(|z| z.conj()).collect();
                a.sort_by(spectral_order);
                Some((leading_distance(&a, &here, cfg.spectrum.count), adjoint_defect(&plus, &minus)))
            } else {
                None
            };
            Ok((cross, conj))
        })
        .collect();
    let (mut worst_cross, mut worst_conj, mut worst_adj) = (0.0f64, 0.0f64, 0.0f64);
    for (&(k, eps), r) in jobs.iter().zip(extra) {
        let (cross, conj) = r?;
        if let Some(x) = cross {
            worst_cross = worst_cross.max(x);
        }
        if let Some((x, a)) = conj {
            worst_conj = worst_conj.max(x);
            worst_adj = worst_adj.max(a);
        }
        if cross.is_some() || conj.is_some() {
            mirror_rows.push(vec![Cell::Int(k.0), Cell::Int(k.1), eps.into(), cross.into(), conj.map(|c| c.0).into(), conj.map(|c| c.1).into()]);
        }
    }
    if !mirror_rows.is_empty() {
        w.csv("symmetry.csv", &["k1", "k2", "eps", "cross_block", "conjugation", "adjoint_defect"], &mirror_rows, &[])?;
    }
    if cfg.spectrum.mirror {
        out.checks.push(CheckResult::at_most("mirror", worst_cross, tol.mirror).with_detail(format!("spec(B_{{-k}}) vs -conj spec(B_k), leading {}", cfg.spectrum.count)));
    }
    if cfg.spectrum.conjugation && cfg.eps.iter().any(|e| *e != 0.0) {
        out.checks.push(
            CheckResult::at_most("conjugation", worst_conj.max(worst_adj), tol.mirror)
                .with_detail(format!("leading {} eigenvalues {worst_conj:e}, adjoint entries {worst_adj:e}", cfg.spectrum.count)),
        );
    }
    if cfg.spectrum.vectors {
        out.residual("max_residual", max_res);
    }
    out.residual("max_im", max_im);
    Ok(out)
}

#[derive(Serialize)]
struct LimitRecord {
    k: (i64, i64),
    branch_id: usize,
    status: &'static str,
    samples: usize,
    limit: Option<C64>,
    error: Option<f64>,
}

pub fn sweep_cmd(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    torus_only(cfg, "sweep")?;
    let mut all = Vec::new();
    for k in &cfg.k {
        let sc = SweepConfig {
            k: (k[0], k[1]),
            eps_max: cfg.grid.max,
            eps_min: cfg.grid.min,
            ratio: cfg.grid.ratio,
            window: Window { center: c(cfg.window.center), radius: cfg.window.radius },
            truncation: truncation(cfg),
        };
        let mut b = sweep(&sc)?;
        extrapolate_all(&mut b);
        all.extend(b);
    }
    let rows: Vec<Vec<Cell>> = branch_rows(&all)
        .iter()
        .map(|r| {
            vec![
                r.eps.into(),
                Cell::Int(r.k1),
                Cell::Int(r.k2),
                r.branch_id.into(),
                r.re.into(),
                r.im.into(),
                r.pairing_abs.into(),
                r.status.into(),
            ]
        })
        .collect();
    w.csv("branches.csv", &["eps", "k1", "k2", "branch_id", "re", "im", "pairing_abs", "status"], &rows, &[])?;
    let limits: Vec<LimitRecord> = all
        .iter()
        .map(|b| LimitRecord {
            k: b.k,
            branch_id: b.id,
            status: b.status.as_str(),
            samples: b.samples.len(),
            limit: b.limit.map(|l| l.value),
            error: b.limit.map(|l| l.error),
        })
        .collect();
    w.json("limits.json", "sweep-limits", &serde_json::json!({ "limits": limits }))?;
    let mut out = Outcome::default();
    let max_im = all.iter().flat_map(|b| b.samples.iter().map(|s| s.lambda.im)).fold(f64::NEG_INFINITY, f64::max);
    out.checks.push(CheckResult::at_most("semibounded", max_im, cfg.tolerances.imag));
    for st in [BranchStatus::Tracked, BranchStatus::Collided, BranchStatus::Defective, BranchStatus::Lost] {
        out.residual(format!("branches/{}", st.as_str()), all.iter().filter(|b| b.status == st).count() as f64);
    }
    Ok(out)
}

pub fn perturb(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    torus_only(cfg, "perturb")?;
    let eps = single_eps(cfg, "perturb")?;
    let k = k_of(cfg);
    let n = modes(cfg, eps);
    let pairs = eig_dense(&assemble_torus_block(k, eps, n)?)?;
    let Some(target) = pairs.get(cfg.perturb.index) else {
        return Err(RunError::Config(vec![format!("perturb.index: only {} eigenvalues", pairs.len())]));
    };
    let r = perturbation_check(k, eps, n, target.lambda, cfg.perturb.delta)?;
    w.json("perturb.json", "perturbation", &r)?;
    let mut out = Outcome::default();
    out.checks.push(CheckResult::at_most("slope-residual", r.relative_residuals[0], cfg.tolerances.slope_residual));
    out.checks.push(CheckResult::flag("fd-convergence", r.improves, format!("relative residuals {:?}", r.relative_residuals)));
    out.residual("pairing_abs", r.pairing_abs);
    Ok(out)
}

#[derive(Serialize)]
struct ProjectRecord {
    k: (i64, i64),
    eps: f64,
    n_modes: usize,
    center: C64,
    radius: f64,
    nodes: usize,
    trace: C64,
    rank: usize,
    enclosed: usize,
    idempotency: f64,
    contour_distance: Option<f64>,
    rank_one_error: Option<f64>,
    derivative: Option<DerivativeRecord>,
}

#[derive(Serialize)]
struct DerivativeRecord {
    steps: [f64; 3],
    differences: [f64; 2],
    ratio: Option<f64>,
    consistent: bool,
    norm: f64,
}

pub fn project(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    torus_only(cfg, "project")?;
    let eps = single_eps(cfg, "project")?;
    let (k, n, p) = (k_of(cfg), modes(cfg, eps), &cfg.project);
    let block = assemble_torus_block(k, eps, n)?;
    let pairs = eig_dense(&block)?;
    let (center, anchor) = match p.center {
        Some(z) => (c(z), None),
        None => match pairs.get(p.index) {
            Some(e) => (e.lambda, Some(e)),
            None => return Err(RunError::Config(vec![format!("project.index: only {} eigenvalues", pairs.len())])),
        },
    };
    let radius = match p.radius {
        Some(r) => r,
        None => {
            let gap = pairs.iter().map(|e| (e.lambda - center).norm()).filter(|d| *d > 1e-12).fold(f64::INFINITY, f64::min);
            gap / 3.0
        }
    };
    let est = contour_projector(&block, center, radius, p.nodes)?;
    let enclosed = est.enclosed.unwrap_or_else(|| pairs.iter().filter(|e| (e.lambda - center).norm() < radius).count());
    let rank_one_error = match anchor {
        Some(e) if enclosed == 1 => Some(frobenius(&(&est.matrix - &e.projector()))),
        _ => None,
    };
    let deriv = if p.derivative { Some(projector_derivative(k, eps, n, center, radius, p.delta, p.nodes)?) } else { None };
    let tol = &cfg.tolerances;
    let mut out = Outcome::default();
    out.checks.push(CheckResult::at_most("idempotency", est.idempotency, tol.idempotency));
    out.checks.push(
        CheckResult::at_most("trace", (est.trace - C64::new(enclosed as f64, 0.0)).norm(), tol.trace)
            .with_detail(format!("{enclosed} eigenvalues enclosed")),
    );
    out.checks.push(CheckResult::flag("rank", est.rank == enclosed, format!("rank {} vs {enclosed} enclosed", est.rank)));
    if let Some(e) = rank_one_error {
        out.checks.push(CheckResult::at_most("rank-one", e, tol.rank_one));
    }
    if let Some(d) = &deriv {
        let mut ch = CheckResult::flag("richardson", d.consistent, format!("differences {:?}", d.differences));
        ch.value = d.ratio;
        ch.limit = format!("within {}% of 4", tol.richardson * 100.0);
        ch.passed = match d.ratio {
            Some(r) => (r / 4.0 - 1.0).abs() <= tol.richardson,
            None => d.consistent,
        };
        out.checks.push(ch);
    }
    let rec = ProjectRecord {
        k,
        eps,
        n_modes: n,
        center,
        radius,
        nodes: p.nodes,
        trace: est.trace,
        rank: est.rank,
        enclosed,
        idempotency: est.idempotency,
        contour_distance: est.contour_distance,
        rank_one_error,
        derivative: deriv.as_ref().map(|d| DerivativeRecord {
            steps: d.steps,
            differences: d.differences,
            ratio: d.ratio,
            consistent: d.consistent,
            norm: frobenius(&d.derivative),
        }),
    };
    w.json("project.json", "projector", &rec)?;
    Ok(out)
}

pub fn probe(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    torus_only(cfg, "probe")?;
    let eps = geometric_grid(cfg.grid.max, cfg.grid.min, cfg.grid.ratio)?;
    let pc = |s: f64| ProbeConfig {
        eps: eps.clone(),
        s,
        lambda: c(cfg.probe.lambda),
        shell: cfg.probe.shell,
        truncation: truncation(cfg),
    };
    let main = hypoelliptic_probe(&pc(cfg.probe.s))?;
    let control = if cfg.probe.control { Some(hypoelliptic_probe(&pc(0.0))?) } else { None };
    let rows: Vec<Vec<Cell>> = (0..main.eps.len())
        .map(|i| {
            vec![
                main.eps[i].into(),
                Cell::Int(main.k[i].0),
                Cell::Int(main.k[i].1),
                main.n_modes[i].into(),
                main.constant[i].into(),
                main.shell_constant[i].into(),
                control.as_ref().map(|c| c.constant[i]).into(),
            ]
        })
        .collect();
    w.csv("probe.csv", &["eps", "k1", "k2", "n_modes", "constant", "shell_constant", "control_constant"], &rows, &[])?;
    #[derive(Serialize)]
    struct Fits<'a> {
        main: &'a kspec_core::sweep_analysis::HypoProbeResult,
        control: Option<&'a kspec_core::sweep_analysis::HypoProbeResult>,
    }
    w.json("probe.json", "hypoelliptic-probe", &Fits { main: &main, control: control.as_ref() })?;
    let mut out = Outcome::default();
    let [lo, hi] = cfg.probe.expected_slope;
    out.checks.push(
        CheckResult::within("probe-slope", main.fit.slope, lo, hi)
            .with_detail(format!("s = {}, 95% CI {:?}; shell-only slope {}", main.s, main.fit.ci, main.shell_fit.slope)),
    );
    if let Some(ctl) = &control {
        out.checks.push(CheckResult::at_most("control-slope", ctl.fit.slope.abs(), cfg.tolerances.control_slope).with_detail("|slope| at s = 0"));
    }
    let shell_ok = main.eps.iter().zip(&main.k).all(|(e, k)| {
        let x = e * ((k.0 * k.0 + k.1 * k.1) as f64).sqrt();
        (1.0..=2.0).contains(&x)
    });
    out.checks.push(CheckResult::flag("shell-range", shell_ok, "ε|k| in [1, 2] on every grid point"));
    out.residual("shell_slope", main.shell_fit.slope);
    Ok(out)
}

fn sde_model(cfg: &RunConfig) -> SdeModel<f64> {
    SdeModel::Surface(match cfg.model {
        ModelSpec::FlatTorus => ManifoldModel::FlatTorus2,
        ModelSpec::Sphere => ManifoldModel::Sphere2,
        ModelSpec::Revolution => ManifoldModel::RevolutionSurface(Profile::Cosine(cfg.profile.clone())),
    })
}

fn observable(o: ObservableSpec) -> Observable {
    match o {
        ObservableSpec::CosTheta => Observable::cos_theta(),
        ObservableSpec::CosX1CosTheta => Observable::cos_x1_cos_theta(),
        ObservableSpec::CosX1 => Observable::cos_x1(),
    }
}

fn stats_rows(s: &EnsembleStats) -> Vec<Vec<Cell>> {
    (0..s.times.len())
        .map(|i| {
            vec![
                s.times[i].into(),
                s.msd[i].into(),
                s.msd_se[i].into(),
                s.vacf[i].into(),
                s.corr.as_ref().map(|c| c[i]).into(),
                s.corr_se.as_ref().map(|c| c[i]).into(),
            ]
        })
        .collect()
}

const STATS_HEADER: [&str; 6] = ["t", "msd", "msd_se", "vacf", "corr_f_g", "corr_se"];

pub fn simulate(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    let s = &cfg.simulate;
    let mut out = Outcome::default();
    match s.mode {
        SimulateMode::Ensemble => {
            if s.dt_halving && s.coarsen % 2 != 0 {
                return Err(RunError::Config(vec!["simulate.coarsen: dt_halving needs an even coarsen".into()]));
            }
            let sample_every = ((s.sample_dt / s.dt).round() as usize).max(1);
            for (i, &eps) in cfg.eps.iter().enumerate() {
                let ec = EnsembleConfig {
                    model: sde_model(cfg),
                    eps,
                    dt: s.dt,
                    horizon: s.horizon,
                    paths: s.paths,
                    seed: cfg.seed,
                    sample_every,
                    initial: s.initial.map_or(Initial::Uniform, |v| Initial::Fixed { z: [v[0], v[1]], theta: v[2] }),
                    coarsen: s.coarsen,
                    blocks: s.blocks,
                    correlation: s.f.map(|f| CorrelationSpec {
                        f: observable(f),
                        g: observable(s.g.unwrap_or(f)),
                        origins: s.origins,
                        stride: s.stride,
                    }),
                };
                let a = simulate_ensemble(&ec)?;
                w.csv(&format!("simulate-{i}.csv"), &STATS_HEADER, &stats_rows(&a), &[format!("eps = {eps:e}")])?;
                let tag = format!("eps={eps}");
                out.checks.push(CheckResult::at_most(&format!("unit-speed/{tag}"), a.max_speed_defect, 1e-10));
                if s.check_msd && cfg.model == ModelSpec::FlatTorus {
                    let mut worst: f64 = 0.0;
                    for j in 1..a.times.len() {
                        let r = msd_reference_flat(eps, a.times[j])?;
                        worst = worst.max((a.msd[j] - r).abs() / a.msd_se[j]);
                    }
                    out.checks.push(CheckResult::at_most(&format!("msd/{tag}"), worst, cfg.tolerances.msd_se).with_detail("max |MSD − closed form| / SE"));
                }
                if s.dt_halving {
                    let half = EnsembleConfig { dt: s.dt / 2.0, coarsen: s.coarsen / 2, sample_every: 2 * sample_every, ..ec.clone() };
                    let b = simulate_ensemble(&half)?;
                    w.csv(&format!("simulate-{i}-half-dt.csv"), &STATS_HEADER, &stats_rows(&b), &[format!("eps = {eps:e}")])?;
                    let shift = (1..a.times.len()).map(|j| (a.msd[j] - b.msd[j]).abs() / a.msd_se[j]).fold(0.0, f64::max);
                    out.checks.push(CheckResult::at_most(&format!("dt-shift/{tag}"), shift, cfg.tolerances.dt_shift_se).with_detail("max MSD shift / SE"));
                }
            }
        }
        SimulateMode::Decay => {
            torus_only(cfg, "correlation decay")?;
            let eps = single_eps(cfg, "decay")?;
            let f = observable(s.f.expect("validated"));
            let mut dc = DecayConfig::new(eps, f.clone(), s.horizon, s.paths, cfg.seed);
            dc.g = s.g.map_or(f, observable);
            dc.dt = s.dt;
            dc.origins = s.origins;
            dc.stride = s.stride;
            let r = correlation_decay(&dc)?;
            w.csv("decay.csv", &STATS_HEADER, &stats_rows(&r.stats), &[format!("eps = {eps:e}")])?;
            #[derive(Serialize)]
            struct Rec<'a> {
                eps: f64,
                fit: &'a kspec_core::kinetic_sde::DecayFit,
                gap: f64,
                blocks: &'a [(i64, i64)],
            }
            w.json("decay.json", "correlation-decay", &Rec { eps, fit: &r.fit, gap: r.gap, blocks: &r.blocks })?;
            out.checks.push(
                CheckResult::at_most("decay-rate", (r.fit.rate - r.gap).abs() / r.gap, cfg.tolerances.decay_rel)
                    .with_detail(format!("fitted {} vs gap {}", r.fit.rate, r.gap)),
            );
        }
        SimulateMode::Deviation => {
            let r = geodesic_deviation(&DeviationConfig {
                eps: s.deviation_eps.clone(),
                horizon: s.horizon,
                paths: s.paths,
                dt: s.dt,
                seed: cfg.seed,
                coarsen: s.coarsen,
            })?;
            let rows: Vec<Vec<Cell>> = r.eps.iter().zip(&r.median).map(|(e, m)| vec![(*e).into(), (*m).into()]).collect();
            w.csv("deviation.csv", &["eps", "median_distance"], &rows, &[])?;
            w.json("deviation.json", "geodesic-deviation", &r)?;
            let [lo, hi] = s.exponent_range;
            match r.exponent {
                Some(x) => out.checks.push(CheckResult::within("deviation-exponent", x, lo, hi).with_detail(format!("95% CI {:?}", r.ci))),
                None => out.checks.push(CheckResult::flag("deviation-exponent", false, "no exponent fitted (needs two positive ε)")),
            }
        }
    }
    Ok(out)
}

fn frame_base(b: FrameBaseSpec, cfg: &RunConfig) -> FrameBase<f64> {
    match b {
        FrameBaseSpec::FlatTorus => FrameBase::Surface(ManifoldModel::FlatTorus2),
        FrameBaseSpec::Sphere => FrameBase::Surface(ManifoldModel::Sphere2),
        FrameBaseSpec::Revolution => FrameBase::Surface(ManifoldModel::RevolutionSurface(Profile::Cosine(cfg.profile.clone()))),
        FrameBaseSpec::Euclidean3 => FrameBase::Euclidean(3),
    }
}

fn base_name(b: FrameBaseSpec) -> &'static str {
    match b {
        FrameBaseSpec::FlatTorus => "flat-torus",
        FrameBaseSpec::Sphere => "sphere",
        FrameBaseSpec::Revolution => "revolution",
        FrameBaseSpec::Euclidean3 => "euclidean-3",
    }
}

pub fn verify_calculus(cfg: &RunConfig, w: &mut ArtifactWriter) -> RunResult {
    let tol = &cfg.tolerances;
    let opts = SuiteOptions { trials: cfg.calculus.trials, seed: cfg.seed, tolerance: tol.calculus, ..SuiteOptions::default() };
    let commutation = cfg
        .calculus
        .bases
        .par_iter()
        .map(|b| verify_commutation_suite(&frame_base(*b, cfg), &opts).map(|r| (*b, r)))
        .collect::<Result<Vec<_>, _>>()?;
    let intertwining = [2, 3]
        .iter()
        .map(|d| verify_intertwining_with(*d, cfg.calculus.intertwining_points, cfg.seed, tol.calculus))
        .collect::<Result<Vec<_>, _>>()?;
    let nash = [ManifoldModel::<f64>::FlatTorus2, ManifoldModel::Sphere2]
        .iter()
        .map(|m| nash_fields(m).map(|(_, r)| r))
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = Outcome::default();
    for (b, r) in &commutation {
        let failed: Vec<&str> = r.failures().iter().map(|i| i.identity.as_str()).collect();
        let mut ch = CheckResult::at_most(&format!("commutation/{}", base_name(*b)), r.max_residual(), tol.calculus);
        ch.passed = r.passed();
        ch.detail = format!("d = {}, {} identities{}", r.dimension, r.identities.len(), if failed.is_empty() { String::new() } else { format!(", failed {failed:?}") });
        out.checks.push(ch);
    }
    for r in &intertwining {
        let eig = r.harmonics.iter().map(|h| (h.measured_eigenvalue - h.expected_eigenvalue).abs()).fold(0.0, f64::max);
        let mut ch = CheckResult::at_most(&format!("intertwining/d{}", r.dimension), r.max_residual.max(eig), tol.calculus);
        ch.detail = format!("{} harmonics, residual {:e}, eigenvalue error {eig:e}", r.harmonics.len(), r.max_residual);
        out.checks.push(ch);
    }
    for r in &nash {
        let s = format!("s{}", r.sphere_dimension);
        out.checks.push(CheckResult::at_most(&format!("nash-sos/{s}"), r.sum_of_squares_residual, tol.nash));
        let div = r.divergence.iter().cloned().fold(0.0, f64::max);
        if cfg.calculus.nash_divergence {
            out.checks.push(CheckResult::at_most(&format!("nash-divergence/{s}"), div, tol.nash).with_detail(format!("per field {:?}", r.divergence)));
        }
        out.residual(format!("nash-divergence/{s}"), div);
        out.residual(format!("nash-divergence-drift/{s}"), r.divergence_drift);
    }
    #[derive(Serialize)]
    struct Report<'a> {
        commutation: Vec<&'a kspec_core::frame_calculus::CommutationReport>,
        intertwining: &'a [kspec_core::frame_calculus::IntertwiningReport],
        nash: &'a [kspec_core::frame_calculus::NashReport],
    }
    let rep = Report { commutation: commutation.iter().map(|(_, r)| r).collect(), intertwining: &intertwining, nash: &nash };
    w.json("calculus.json", "frame-calculus", &rep)?;
    Ok(out)
}
