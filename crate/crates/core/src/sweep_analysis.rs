//! ε-continuation of torus eigenvalue branches, the first-order perturbation check,
//! the ε → −ε mirror check and the hypoelliptic-constant probe.

use crate::error::{Error, Result};
use crate::linalg::{bilinear, Tridiagonal};
use crate::operator_assembly::{assemble_torus_block, default_truncation, SobolevWeight, SpectralBlock};
use crate::spectral_engine::{eig_dense, eigenvalues_dense, match_sets, spectral_distance, spectral_order, EigenPair, DEFECTIVE_PAIRING};
use faer::{c64, Mat};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchStatus {
    Tracked,
    Collided,
    Defective,
    /// No eigenvalue inside the matching gate.
    Lost,
}

impl BranchStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchStatus::Tracked => "tracked",
            BranchStatus::Collided => "collided",
            BranchStatus::Defective => "defective",
            BranchStatus::Lost => "lost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchSample {
    pub eps: f64,
    pub lambda: c64,
    pub pairing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Limit {
    pub value: c64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub id: usize,
    pub k: (i64, i64),
    pub samples: Vec<BranchSample>,
    pub status: BranchStatus,
    pub limit: Option<Limit>,
}

impl Branch {
    pub fn from_samples(id: usize, k: (i64, i64), samples: Vec<BranchSample>) -> Self {
        Self { id, k, samples, status: BranchStatus::Tracked, limit: None }
    }

    fn predict(&self, eps: f64) -> c64 {
        let n = self.samples.len();
        let last = self.samples[n - 1];
        if n < 2 {
            return last.lambda;
        }
        let prev = self.samples[n - 2];
        let v = (last.lambda - prev.lambda) / (last.eps - prev.eps);
        last.lambda + v * (eps - last.eps)
    }

    fn gate(&self, first: f64) -> f64 {
        let mut steps: Vec<f64> = self.samples.windows(2).map(|w| (w[1].lambda - w[0].lambda).norm()).collect();
        if steps.is_empty() {
            return first;
        }
        steps.sort_by(f64::total_cmp);
        let m = steps.len();
        let median = if m % 2 == 1 { steps[m / 2] } else { 0.5 * (steps[m / 2 - 1] + steps[m / 2]) };
        (3.0 * median).max(GATE_FLOOR)
    }
}

pub const GATE_FLOOR: f64 = 1e-9;

/// Disk in the complex plane selecting the branches to follow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub center: c64,
    pub radius: f64,
}

impl Window {
    pub fn contains(&self, z: c64) -> bool {
        (z - self.center).norm() <= self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    Default,
    Fixed(usize),
}

impl Truncation {
    pub fn modes(self, eps: f64) -> usize {
        match self {
            Truncation::Default => default_truncation(eps),
            Truncation::Fixed(n) => n,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub k: (i64, i64),
    pub eps_max: f64,
    pub eps_min: f64,
    pub ratio: f64,
    pub window: Window,
    pub truncation: Truncation,
}

/// `ε_max, ε_max r, ε_max r², …` down to `ε_min`, which is always the last point.
pub fn geometric_grid(eps_max: f64, eps_min: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(0.5..=0.95).contains(&ratio) {
        return Err(Error::Invalid(format!("grid ratio {ratio} outside [0.5, 0.95]")));
    }
    if !(eps_max > eps_min && eps_min > 0.0) {
        return Err(Error::Invalid(format!("need ε_max > ε_min > 0, got {eps_max} and {eps_min}")));
    }
    let mut grid = vec![eps_max];
    loop {
        let next = grid[grid.len() - 1] * ratio;
        if next <= eps_min * (1.0 + 1e-12) {
            break;
        }
        grid.push(next);
    }
    grid.push(eps_min);
    Ok(grid)
}

/// Continues every eigenvalue inside the window at `ε_max` down the grid.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<Branch>> {
    let grid = geometric_grid(cfg.eps_max, cfg.eps_min, cfg.ratio)?;
    let spectra: Vec<Vec<EigenPair>> = grid
        .par_iter()
        .map(|&e| eig_dense(&assemble_torus_block(cfg.k, e, cfg.truncation.modes(e))?))
        .collect::<Result<_>>()?;
    let mut branches: Vec<Branch> = spectra[0]
        .iter()
        .filter(|p| cfg.window.contains(p.lambda))
        .enumerate()
        .map(|(id, p)| {
            let mut b = Branch::from_samples(id, cfg.k, vec![BranchSample { eps: grid[0], lambda: p.lambda, pairing: p.pairing.norm() }]);
            if p.defective() {
                b.status = BranchStatus::Defective;
            }
            b
        })
        .collect();
    if branches.is_empty() {
        return Err(Error::Invalid(format!("no eigenvalue of block {:?} at ε = {} inside the window", cfg.k, grid[0])));
    }
    let first_gate = 2.0 * cfg.window.radius / 10.0;
    for (step, spec) in spectra.iter().enumerate().skip(1) {
        let eps = grid[step];
        advance(&mut branches, spec, eps, first_gate);
    }
    Ok(branches)
}

fn advance(branches: &mut [Branch], spec: &[EigenPair], eps: f64, first_gate: f64) {
    let active: Vec<usize> = (0..branches.len())
        .filter(|&b| matches!(branches[b].status, BranchStatus::Tracked | BranchStatus::Defective))
        .collect();
    let preds: Vec<(c64, f64)> = active.iter().map(|&b| (branches[b].predict(eps), branches[b].gate(first_gate))).collect();
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (a, &(p, g)) in preds.iter().enumerate() {
        for (t, pair) in spec.iter().enumerate() {
            let d = (pair.lambda - p).norm();
            if d <= g {
                cand.push((d, a, t));
            }
        }
    }
    // Nearest predicted distance first, then branch index, then target index.
    cand.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut assigned: Vec<Option<usize>> = vec![None; active.len()];
    let mut owner: Vec<Option<usize>> = vec![None; spec.len()];
    let mut blocked: Vec<Option<usize>> = vec![None; active.len()];
    for &(_, a, t) in &cand {
        if assigned[a].is_some() {
            continue;
        }
        match owner[t] {
            None => {
                owner[t] = Some(a);
                assigned[a] = Some(t);
            }
            Some(o) => {
                if blocked[a].is_none() {
                    blocked[a] = Some(o);
                }
            }
        }
    }
    let mut collided = vec![false; active.len()];
    for a in 0..active.len() {
        if assigned[a].is_none() {
            if let Some(o) = blocked[a] {
                collided[a] = true;
                collided[o] = true;
            }
        }
    }
    for (a, &b) in active.iter().enumerate() {
        let br = &mut branches[b];
        if collided[a] {
            if let Some(t) = assigned[a] {
                let p = &spec[t];
                br.samples.push(BranchSample { eps, lambda: p.lambda, pairing: p.pairing.norm() });
            }
            br.status = BranchStatus::Collided;
            continue;
        }
        match assigned[a] {
            Some(t) => {
                let p = &spec[t];
                br.samples.push(BranchSample { eps, lambda: p.lambda, pairing: p.pairing.norm() });
                if p.defective() {
                    br.status = BranchStatus::Defective;
                }
            }
            None => br.status = BranchStatus::Lost,
        }
    }
}

fn quadratic_at_zero(s: &[BranchSample]) -> c64 {
    let (x0, x1, x2) = (s[0].eps, s[1].eps, s[2].eps);
    let l0 = x1 * x2 / ((x0 - x1) * (x0 - x2));
    let l1 = x0 * x2 / ((x1 - x0) * (x1 - x2));
    let l2 = x0 * x1 / ((x2 - x0) * (x2 - x1));
    s[0].lambda * l0 + s[1].lambda * l1 + s[2].lambda * l2
}

/// Richardson extrapolation to ε = 0 assuming `λ(ε) = λ* + c₁ε + c₂ε²`.
///
/// The estimate interpolates the last three samples; the error bar is its distance to the
/// estimate from the three samples before the last.
pub fn extrapolate_limit(branch: &Branch) -> Result<Limit> {
    match branch.status {
        BranchStatus::Tracked => {}
        s => return Err(Error::Refused(format!("branch {} is {}, no limit is fitted", branch.id, s.as_str()))),
    }
    let n = branch.samples.len();
    if n < 4 {
        return Err(Error::Invalid(format!("extrapolation needs at least 4 samples, branch has {n}")));
    }
    let eps_min = branch.samples.iter().map(|s| s.eps).fold(f64::INFINITY, f64::min);
    if eps_min > 1e-2 {
        return Err(Error::Invalid(format!("extrapolation needs ε_min ≤ 1e-2, branch stops at {eps_min}")));
    }
    let last = quadratic_at_zero(&branch.samples[n - 3..]);
    let prev = quadratic_at_zero(&branch.samples[n - 4..n - 1]);
    Ok(Limit { value: last, error: (last - prev).norm() })
}

pub fn extrapolate_all(branches: &mut [Branch]) {
    for b in branches.iter_mut() {
        b.limit = extrapolate_limit(b).ok();
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchRow {
    pub eps: f64,
    pub k1: i64,
    pub k2: i64,
    pub branch_id: usize,
    pub re: f64,
    pub im: f64,
    pub pairing_abs: f64,
    pub status: &'static str,
}

pub fn branch_rows(branches: &[Branch]) -> Vec<BranchRow> {
    let mut rows = Vec::new();
    for b in branches {
        for s in &b.samples {
            rows.push(BranchRow {
                eps: s.eps,
                k1: b.k.0,
                k2: b.k.1,
                branch_id: b.id,
                re: s.lambda.re,
                im: s.lambda.im,
                pairing_abs: s.pairing,
                status: b.status.as_str(),
            });
        }
    }
    rows
}

/// `dλ/dε = vᵀ D u / vᵀ u` with `D = ∂_ε B = −i diag(n²)`.
pub fn first_order_slope(block: &SpectralBlock<f64>, right: &[c64], left: &[c64]) -> Result<c64> {
    let p = bilinear(left, right);
    let scale = crate::linalg::norm2(left) * crate::linalg::norm2(right);
    if p.norm() <= DEFECTIVE_PAIRING * scale {
        return Err(Error::Refused(format!(
            "|⟨v,u⟩| = {:e} is at the defectiveness threshold; the first-order formula needs a simple eigenvalue (m = 1)",
            p.norm() / scale
        )));
    }
    let d = block.epsilon_derivative();
    let du: Vec<c64> = d.iter().zip(right).map(|(a, b)| a * b).collect();
    Ok(bilinear(left, &du) / p)
}

#[derive(Debug, Clone, Serialize)]
pub struct PerturbationReport {
    pub k: (i64, i64),
    pub eps0: f64,
    pub n_modes: usize,
    pub lambda: c64,
    pub pairing_abs: f64,
    pub formula_slope: c64,
    pub steps: Vec<f64>,
    pub fd_slopes: Vec<c64>,
    /// `|fd − formula| / |formula|` per step.
    pub relative_residuals: Vec<f64>,
    /// Residual over ε₀.
    pub constant: f64,
    pub improves: bool,
}

pub const FD_IMPROVEMENT: f64 = 1.8;

/// Compares the eigenvector slope formula against central differences of the eigenvalue
/// nearest `target`, at steps `δ, δ/2, δ/4`.
pub fn perturbation_check(k: (i64, i64), eps0: f64, n_modes: usize, target: c64, delta: f64) -> Result<PerturbationReport> {
    let block = assemble_torus_block(k, eps0, n_modes)?;
    let pairs = eig_dense(&block)?;
    let pair = nearest(&pairs, target);
    let formula = first_order_slope(&block, &pair.right, &pair.left)?;
    let steps = vec![delta, delta / 2.0, delta / 4.0];
    let mut fd = Vec::new();
    for &h in &steps {
        let up = nearest_value(&eigenvalues_dense(&assemble_torus_block(k, eps0 + h, n_modes)?)?, pair.lambda);
        let dn = nearest_value(&eigenvalues_dense(&assemble_torus_block(k, eps0 - h, n_modes)?)?, pair.lambda);
        fd.push((up - dn) / (2.0 * h));
    }
    let scale = formula.norm().max(f64::MIN_POSITIVE);
    let rel: Vec<f64> = fd.iter().map(|s| (s - formula).norm() / scale).collect();
    let noise = 1e-11;
    let improves = rel.windows(2).all(|w| w[1] <= noise || w[0] >= FD_IMPROVEMENT * w[1]);
    Ok(PerturbationReport {
        k,
        eps0,
        n_modes,
        lambda: pair.lambda,
        pairing_abs: pair.pairing.norm(),
        formula_slope: formula,
        steps,
        fd_slopes: fd,
        constant: rel[0] * scale / eps0,
        relative_residuals: rel,
        improves,
    })
}

fn nearest(pairs: &[EigenPair], z: c64) -> &EigenPair {
    pairs.iter().min_by(|a, b| (a.lambda - z).norm().total_cmp(&(b.lambda - z).norm())).expect("nonempty spectrum")
}

fn nearest_value(ev: &[c64], z: c64) -> c64 {
    *ev.iter().min_by(|a, b| (*a - z).norm().total_cmp(&(*b - z).norm())).expect("nonempty spectrum")
}

#[derive(Debug, Clone, Serialize)]
pub struct ConjugationReport {
    pub k: (i64, i64),
    pub eps: f64,
    pub n_modes: usize,
    /// Matching distance between `spec(B(k, −ε))` and `conj spec(B(k, ε))`.
    pub residual: f64,
    /// `‖B(k, −ε) − B(k, ε)ᴴ‖` entrywise maximum.
    pub adjoint_defect: f64,
}

pub fn conjugation_check(k: (i64, i64), eps: f64, n_modes: usize) -> Result<ConjugationReport> {
    let plus = assemble_torus_block(k, eps, n_modes)?;
    let minus = assemble_torus_block(k, -eps, n_modes)?;
    let defect = adjoint_defect(&plus, &minus);
    let a = eigenvalues_dense(&minus)?;
    let b: Vec<c64> = eigenvalues_dense(&plus)?.iter().map(|z| z.conj()).collect();
    Ok(ConjugationReport { k, eps, n_modes, residual: spectral_distance(&a, &b), adjoint_defect: defect })
}

/// Matching distance between `spec(B_{−k})` and `−conj spec(B_k)`.
pub fn cross_block_residual(k: (i64, i64), eps: f64, n_modes: usize) -> Result<f64> {
    let a = eigenvalues_dense(&assemble_torus_block((-k.0, -k.1), eps, n_modes)?)?;
    let b: Vec<c64> = eigenvalues_dense(&assemble_torus_block(k, eps, n_modes)?)?.iter().map(|z| -z.conj()).collect();
    Ok(spectral_distance(&a, &b))
}

/// Largest entry of `B(k, −ε) − B(k, ε)ᴴ`.
pub fn adjoint_defect(plus: &SpectralBlock<f64>, minus: &SpectralBlock<f64>) -> f64 {
    max_entry_diff(&minus.matrix, &adjoint_tridiagonal(&plus.matrix))
}

fn adjoint_tridiagonal(t: &Tridiagonal<f64>) -> Tridiagonal<f64> {
    Tridiagonal {
        sub: t.sup.iter().map(|z| z.conj()).collect(),
        diag: t.diag.iter().map(|z| z.conj()).collect(),
        sup: t.sub.iter().map(|z| z.conj()).collect(),
    }
}

fn max_entry_diff(a: &Tridiagonal<f64>, b: &Tridiagonal<f64>) -> f64 {
    a.sub
        .iter()
        .zip(&b.sub)
        .chain(a.diag.iter().zip(&b.diag))
        .chain(a.sup.iter().zip(&b.sup))
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% Student-t interval for the slope.
    pub ci: (f64, f64),
}

pub fn loglog_fit(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(Error::Invalid("log-log fit needs at least 3 paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let se = (sse / (n as f64 - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n as f64 - 2.0).map_err(|e| Error::Invalid(e.to_string()))?.inverse_cdf(0.975);
    Ok(LogLogFit { slope, intercept, ci: (slope - t * se, slope + t * se) })
}

#[derive(Debug, Clone, Serialize)]
pub struct HypoProbeResult {
    pub eps: Vec<f64>,
    pub k: Vec<(i64, i64)>,
    pub n_modes: Vec<usize>,
    pub s: f64,
    pub lambda: c64,
    /// `sup ‖Λ_s u‖ / ‖(ε(B − λ); I) u‖`.
    pub constant: Vec<f64>,
    pub fit: LogLogFit,
    /// Same supremum with the `‖u‖` term dropped from the denominator.
    pub shell_constant: Vec<f64>,
    pub shell_fit: LogLogFit,
    pub regularized: bool,
    pub family: String,
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub eps: Vec<f64>,
    pub s: f64,
    pub lambda: c64,
    /// Momentum rule: `k = (round(shell / ε), 0)`.
    pub shell: f64,
    pub truncation: Truncation,
}

impl ProbeConfig {
    pub fn new(eps: Vec<f64>, s: f64) -> Self {
        Self { eps, s, lambda: c64::new(0.0, 0.0), shell: 1.5, truncation: Truncation::Default }
    }
}

pub const PROBE_REGULARIZATION: f64 = 1e-14;

pub fn hypoelliptic_probe(cfg: &ProbeConfig) -> Result<HypoProbeResult> {
    if cfg.eps.len() < 3 {
        return Err(Error::Invalid("probe needs at least 3 values of ε".into()));
    }
    let lo = cfg.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cfg.eps.iter().copied().fold(0.0, f64::max);
    if (hi / lo).log10() < 1.5 - 1e-12 {
        return Err(Error::Invalid(format!("probe grid spans {:.2} decades, need 1.5", (hi / lo).log10())));
    }
    let rows: Vec<(i64, usize, f64, f64, bool)> = cfg
        .eps
        .par_iter()
        .map(|&e| {
            let k1 = (cfg.shell / e).round() as i64;
            if !(1.0..=2.0).contains(&(e * k1 as f64)) {
                return Err(Error::Invalid(format!("ε|k| = {} outside [1, 2]", e * k1 as f64)));
            }
            let n = cfg.truncation.modes(e);
            let block = assemble_torus_block((k1, 0), e, n)?;
            let w = SobolevWeight::new(cfg.s, e, (k1, 0), n);
            let (c, r1) = pencil_constant(&block, &w.weights, cfg.lambda, 1.0)?;
            let (sc, r2) = pencil_constant(&block, &w.weights, cfg.lambda, 0.0)?;
            Ok((k1, n, c, sc, r1 || r2))
        })
        .collect::<Result<_>>()?;
    let constant: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let shell_constant: Vec<f64> = rows.iter().map(|r| r.3).collect();
    Ok(HypoProbeResult {
        fit: loglog_fit(&cfg.eps, &constant)?,
        shell_fit: loglog_fit(&cfg.eps, &shell_constant)?,
        eps: cfg.eps.clone(),
        k: rows.iter().map(|r| (r.0, 0)).collect(),
        n_modes: rows.iter().map(|r| r.1).collect(),
        s: cfg.s,
        lambda: cfg.lambda,
        constant,
        shell_constant,
        regularized: rows.iter().any(|r| r.4),
        family: format!("k = (round({}/ε), 0), N = default rule, λ = {}", cfg.shell, cfg.lambda),
    })
}

/// Largest generalized singular value of `diag(w)` against `(ε(B − λ); √ι I)`.
///
/// With `A = ε²(B − λ)ᴴ(B − λ) + ι I = L Lᴴ` the value is `σ_max(L⁻¹ diag(w))`.
fn pencil_constant(block: &SpectralBlock<f64>, w: &[f64], lambda: c64, iota: f64) -> Result<(f64, bool)> {
    let n = block.dim();
    let eps = block.epsilon;
    let m = block.matrix.shifted(lambda);
    let dense = m.to_dense();
    let mut a = Mat::<c64>::from_fn(n, n, |i, j| {
        let lo = i.min(j).saturating_sub(1);
        let hi = (i.max(j) + 1).min(n - 1);
        let mut s = c64::new(0.0, 0.0);
        for r in lo..=hi {
            s += dense[r * n + i].conj() * dense[r * n + j];
        }
        s * eps * eps
    });
    for i in 0..n {
        a[(i, i)] += c64::new(iota, 0.0);
    }
    let (l, regularized) = match cholesky(&a) {
        Some(l) => (l, false),
        None => {
            let top = (0..n).map(|i| a[(i, i)].re).fold(0.0, f64::max);
            for i in 0..n {
                a[(i, i)] += c64::new(PROBE_REGULARIZATION * top.max(1.0), 0.0);
            }
            (cholesky(&a).ok_or_else(|| Error::Singular("probe pencil stays indefinite after regularization".into()))?, true)
        }
    };
    // X = L⁻¹ diag(w) by forward substitution.
    let mut x = Mat::<c64>::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { c64::new(w[c], 0.0) } else { c64::new(0.0, 0.0) };
            for j in c..i {
                s -= l[(i, j)] * x[(j, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    let sv = x.singular_values().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    Ok((sv.first().copied().unwrap_or(0.0), regularized))
}

fn cholesky(a: &Mat<c64>) -> Option<Mat<c64>> {
    let n = a.nrows();
    let mut l = Mat::<c64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re;
        for p in 0..j {
            d -= l[(j, p)].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = c64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)].conj();
            }
            l[(i, j)] = s / d;
        }
    }
    Some(l)
}

/// Relative eigenvalue drift per spectral ordering, used for truncation checks.
pub fn leading_eigenvalues(k: (i64, i64), eps: f64, n_modes: usize, count: usize) -> Result<Vec<c64>> {
    let mut ev = eigenvalues_dense(&assemble_torus_block(k, eps, n_modes)?)?;
    ev.sort_by(spectral_order);
    ev.truncate(count);
    Ok(ev)
}

/// One-to-one matching distance between two eigenvalue lists of equal length.
pub fn matched_drift(a: &[c64], b: &[c64]) -> f64 {
    match_sets(a, b).iter().map(|m| m.1).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(grid: &[f64], f: impl Fn(f64) -> c64) -> Branch {
        Branch::from_samples(0, (0, 0), grid.iter().map(|&e| BranchSample { eps: e, lambda: f(e), pairing: 1.0 }).collect())
    }

    #[test]
    fn grid_ends_at_eps_min() {
        let g = geometric_grid(0.2, 1e-3, 0.8).unwrap();
        assert_eq!(g[0], 0.2);
        assert_eq!(*g.last().unwrap(), 1e-3);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
        assert!(geometric_grid(0.2, 1e-3, 0.4).is_err());
    }

    #[test]
    fn synthetic_quadratic_branch_recovers_limit() {
        let g = geometric_grid(0.2, 1e-3, 0.8).unwrap();
        let b = synthetic(&g, |e| c64::new(0.3 + 2.0 * e - 5.0 * e * e, 0.0));
        let l = extrapolate_limit(&b).unwrap();
        assert!((l.value - c64::new(0.3, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn three_samples_are_rejected() {
        let b = synthetic(&[0.1, 0.01, 0.001], |e| c64::new(e, 0.0));
        assert!(matches!(extrapolate_limit(&b), Err(Error::Invalid(_))));
    }

    #[test]
    fn collided_branch_is_refused() {
        let g = geometric_grid(0.2, 1e-3, 0.8).unwrap();
        let mut b = synthetic(&g, |e| c64::new(e, 0.0));
        b.status = BranchStatus::Collided;
        assert!(matches!(extrapolate_limit(&b), Err(Error::Refused(_))));
    }

    #[test]
    fn loglog_fit_recovers_power() {
        let x = [1e-3, 1e-2, 1e-1, 1.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        let f = loglog_fit(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn cholesky_reproduces_matrix() {
        let a = Mat::<c64>::from_fn(3, 3, |i, j| {
            if i == j {
                c64::new(4.0, 0.0)
            } else if i < j {
                c64::new(0.5, 0.25)
            } else {
                c64::new(0.5, -0.25)
            }
        });
        let l = cholesky(&a).unwrap();
        let p = &l * l.adjoint();
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[(i, j)] - a[(i, j)]).norm() < 1e-14);
            }
        }
    }
}
