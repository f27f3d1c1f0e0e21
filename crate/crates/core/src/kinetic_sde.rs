//! Kinetic Brownian motion: geodesic transport with fiber diffusion of intensity ε.
//!
//! The direction diffuses with generator `ε Δ_S` (on surfaces `ε ∂_θ²`), so fiber modes
//! `e^{inθ}` relax at rate `εn²` and the position moves at unit speed along the direction.

use crate::error::{Error, Result};
use crate::frame_calculus::{FrameBase, FramePoint};
use crate::geometry::{Chart, CospherePoint, ManifoldModel};
use crate::operator_assembly::{assemble_torus_block, default_truncation};
use crate::scalar::Real;
use crate::spectral_engine::eigenvalues_dense;
use crate::sweep_analysis::loglog_fit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub enum SdeModel<T> {
    Surface(ManifoldModel<T>),
    /// `ℝ^d` carrying a full orthonormal frame `ζ`; the first row is the direction.
    Euclidean(usize),
}

impl<T: Real> SdeModel<T> {
    pub fn dim(&self) -> usize {
        match self {
            SdeModel::Surface(_) => 2,
            SdeModel::Euclidean(d) => *d,
        }
    }

    /// Normal draws consumed by one fiber increment.
    pub fn noise_dim(&self) -> usize {
        self.dim() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Direction<T> {
    Covector([T; 2]),
    Frame(FramePoint<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathState<T> {
    /// Chart position (wrapped on the torus).
    pub z: Vec<T>,
    /// Unwrapped position: the lift to the universal cover on the torus, the chart position otherwise.
    pub lift: Vec<T>,
    pub direction: Direction<T>,
    pub chart: Chart,
    pub t: T,
    pub path_id: u64,
    /// Normal variates drawn so far from the path stream.
    pub draws: u64,
}

impl<T: Real> PathState<T> {
    pub fn surface(z: [T; 2], zeta1: [T; 2], path_id: u64) -> Self {
        Self {
            z: z.to_vec(),
            lift: z.to_vec(),
            direction: Direction::Covector(zeta1),
            chart: Chart::Standard,
            t: T::zero(),
            path_id,
            draws: 0,
        }
    }

    pub fn frame(p: FramePoint<T>, path_id: u64) -> Self {
        Self { z: p.z.clone(), lift: p.z.clone(), chart: p.chart, direction: Direction::Frame(p), t: T::zero(), path_id, draws: 0 }
    }

    /// Velocity `g⁻¹ζ¹` in chart coordinates.
    pub fn velocity(&self, model: &SdeModel<T>) -> Vec<T> {
        match (&self.direction, model) {
            (Direction::Covector(p), SdeModel::Surface(m)) => {
                let gi = m.metric_inverse_generic(&self.z);
                vec![gi[0] * p[0] + gi[1] * p[1], gi[2] * p[0] + gi[3] * p[1]]
            }
            (Direction::Frame(f), _) => f.row(0).to_vec(),
            _ => unreachable!("direction kind matches the model"),
        }
    }

    /// Angle of the direction in the flat chart.
    pub fn theta(&self) -> T {
        match &self.direction {
            Direction::Covector(p) => p[1].atan2(p[0]),
            Direction::Frame(f) => f.zeta[1].atan2(f.zeta[0]),
        }
    }

    /// `| |ζ¹|_g − 1 |`, or the frame orthonormality defect.
    pub fn speed_defect(&self, model: &SdeModel<T>) -> Result<T> {
        match (&self.direction, model) {
            (Direction::Covector(p), SdeModel::Surface(m)) => Ok((m.norm(&[self.z[0], self.z[1]], p)? - T::one()).abs()),
            (Direction::Frame(f), SdeModel::Euclidean(d)) => Ok(f.orthonormality_defect(&FrameBase::Euclidean(*d))),
            _ => Err(Error::Invalid("path state does not match the model".into())),
        }
    }
}

fn half_geodesic<T: Real>(model: &SdeModel<T>, s: &mut PathState<T>, h: T) -> Result<()> {
    match (model, &s.direction) {
        (SdeModel::Surface(m), Direction::Covector(p)) => {
            let p = *p;
            let start = CospherePoint { z: [s.z[0], s.z[1]], zeta1: p, chart: s.chart };
            let end = m.geodesic_flow(&start, h).map_err(|e| step_error(s, e))?;
            if matches!(m, ManifoldModel::FlatTorus2) {
                s.lift[0] += h * p[0];
                s.lift[1] += h * p[1];
            } else {
                s.lift = end.z.to_vec();
            }
            s.z = end.z.to_vec();
            s.direction = Direction::Covector(end.zeta1);
            s.chart = end.chart;
            Ok(())
        }
        (SdeModel::Euclidean(d), Direction::Frame(_)) => {
            let d = *d;
            if let Direction::Frame(f) = &mut s.direction {
                for i in 0..d {
                    let v = f.zeta[i];
                    f.z[i] += h * v;
                    s.z[i] = f.z[i];
                    s.lift[i] = f.z[i];
                }
            }
            Ok(())
        }
        _ => Err(Error::Invalid("path state does not match the model".into())),
    }
}

fn step_error<T: Real>(s: &PathState<T>, e: Error) -> Error {
    let z: Vec<f64> = s.z.iter().map(|v| v.as_f64()).collect();
    Error::Integrator { t: s.t.as_f64(), step: 0.0, steps: 0, reason: format!("{e} at z = {z:?}, chart {:?}", s.chart) }
}

/// One Strang step: half geodesic, fiber increment from the normals `xi`, half geodesic.
pub fn step<T: Real>(model: &SdeModel<T>, s: &PathState<T>, dt: T, eps: T, xi: &[T]) -> Result<PathState<T>> {
    if !(dt > T::zero()) {
        return Err(Error::Invalid("dt must be positive".into()));
    }
    if xi.len() != model.noise_dim() {
        return Err(Error::LengthMismatch { expected: model.noise_dim(), got: xi.len() });
    }
    let mut out = s.clone();
    let amp = (T::lit(2.0) * eps * dt).sqrt();
    if amp == T::zero() {
        half_geodesic(model, &mut out, dt)?;
        out.t += dt;
        return Ok(out);
    }
    let h = dt / T::lit(2.0);
    half_geodesic(model, &mut out, h)?;
    match (model, &mut out.direction) {
        (SdeModel::Surface(m), Direction::Covector(p)) => {
            let z = [out.z[0], out.z[1]];
            let q = perpendicular(m, &z, p)?;
            let (sn, cs) = (amp * xi[0]).sin_cos();
            let rotated = [cs * p[0] + sn * q[0], cs * p[1] + sn * q[1]];
            *p = m.normalize(&z, &rotated)?;
        }
        (SdeModel::Euclidean(d), Direction::Frame(f)) => {
            let a: Vec<T> = xi.iter().map(|x| amp * *x).collect();
            rotate_first_row(f, *d, &a);
            f.reorthonormalize(&FrameBase::Euclidean(*d));
        }
        _ => return Err(Error::Invalid("path state does not match the model".into())),
    }
    half_geodesic(model, &mut out, h)?;
    out.t += dt;
    Ok(out)
}

/// Unit covector `g⁻¹`-orthogonal to `p`, positively oriented.
fn perpendicular<T: Real>(m: &ManifoldModel<T>, z: &[T; 2], p: &[T; 2]) -> Result<[T; 2]> {
    let gi = m.metric_inverse_generic(z);
    let ip = |a: &[T; 2], b: &[T; 2]| a[0] * (gi[0] * b[0] + gi[1] * b[1]) + a[1] * (gi[2] * b[0] + gi[3] * b[1]);
    let mut q = [-p[1], p[0]];
    let c = ip(&q, p) / ip(p, p);
    q = [q[0] - c * p[0], q[1] - c * p[1]];
    m.normalize(z, &q)
}

/// `ζ ← exp(Σ_k a_k A_{1k}) ζ`, where `A_{1k}` turns row 1 towards row `k`.
fn rotate_first_row<T: Real>(f: &mut FramePoint<T>, d: usize, a: &[T]) {
    let theta = a.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt();
    if theta == T::zero() {
        return;
    }
    let (sn, cs) = theta.sin_cos();
    let rows: Vec<Vec<T>> = (0..d).map(|k| f.row(k).to_vec()).collect();
    // Ω = Σ a_k (E_{1k} − E_{k1}); exp(Ω) = I + sin θ/θ Ω + (1 − cos θ)/θ² Ω².
    let mut out = rows.clone();
    for j in 0..d {
        let w: T = (1..d).fold(T::zero(), |s, k| s + a[k - 1] * rows[k][j]);
        out[0][j] = cs * rows[0][j] + sn / theta * w;
        for k in 1..d {
            let ak = a[k - 1];
            out[k][j] = rows[k][j] - sn / theta * ak * rows[0][j] - (T::one() - cs) / (theta * theta) * ak * w;
        }
    }
    for k in 0..d {
        for j in 0..d {
            f.zeta[k * d + j] = out[k][j];
        }
    }
}

/// Draws the fiber normals for one step, summing `coarsen` fine draws as `Σξ/√coarsen`.
pub fn draw_increments<T: Real>(rng: &mut ChaCha8Rng, noise_dim: usize, coarsen: usize, s: &mut PathState<T>) -> Vec<T> {
    let mut xi = vec![0.0f64; noise_dim];
    for _ in 0..coarsen {
        for x in xi.iter_mut() {
            let v: f64 = rng.sample(StandardNormal);
            *x += v;
        }
    }
    s.draws += (noise_dim * coarsen) as u64;
    let scale = 1.0 / (coarsen as f64).sqrt();
    xi.into_iter().map(|x| T::lit(x * scale)).collect()
}

/// Counter-based stream for one path.
pub fn path_rng(seed: u64, path_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id);
    rng
}

/// Mean-zero trigonometric polynomial on `T² × S¹`: `Σ c cos(k·z + nθ + φ)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observable {
    pub terms: Vec<TrigTerm>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrigTerm {
    pub coef: f64,
    pub k: (i64, i64),
    pub n: i64,
    pub phase: f64,
}

impl Observable {
    pub fn cos_theta() -> Self {
        Self { terms: vec![TrigTerm { coef: 1.0, k: (0, 0), n: 1, phase: 0.0 }] }
    }

    /// `cos x₁ · cos θ`.
    pub fn cos_x1_cos_theta() -> Self {
        Self {
            terms: vec![
                TrigTerm { coef: 0.5, k: (1, 0), n: 1, phase: 0.0 },
                TrigTerm { coef: 0.5, k: (1, 0), n: -1, phase: 0.0 },
            ],
        }
    }

    pub fn cos_x1() -> Self {
        Self { terms: vec![TrigTerm { coef: 1.0, k: (1, 0), n: 0, phase: 0.0 }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(Error::Invalid("observable has no terms".into()));
        }
        if self.terms.iter().any(|t| t.k == (0, 0) && t.n == 0 && t.coef != 0.0) {
            return Err(Error::Invalid("observable must have zero mean (no constant term)".into()));
        }
        Ok(())
    }

    pub fn eval(&self, z: &[f64], theta: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * (t.k.0 as f64 * z[0] + t.k.1 as f64 * z[1] + t.n as f64 * theta + t.phase).cos())
            .sum()
    }

    /// Torus momenta the observable lives on.
    pub fn blocks(&self) -> Vec<(i64, i64)> {
        let mut b: Vec<(i64, i64)> = self.terms.iter().map(|t| t.k).collect();
        b.sort();
        b.dedup();
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Initial {
    /// Flat-chart start at a fixed point and angle.
    Fixed { z: [f64; 2], theta: f64 },
    /// Uniform on the torus and the fiber (the invariant measure).
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSpec {
    pub f: Observable,
    pub g: Observable,
    /// Number of time origins `s_j = j · stride`.
    pub origins: usize,
    pub stride: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub model: SdeModel<f64>,
    pub eps: f64,
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    /// Recorded every `sample_every` steps.
    pub sample_every: usize,
    pub initial: Initial,
    pub coarsen: usize,
    pub blocks: usize,
    pub correlation: Option<CorrelationSpec>,
}

impl EnsembleConfig {
    pub fn flat(eps: f64, dt: f64, horizon: f64, paths: usize, seed: u64) -> Self {
        Self {
            model: SdeModel::Surface(ManifoldModel::FlatTorus2),
            eps,
            dt,
            horizon,
            paths,
            seed,
            sample_every: ((0.1 / dt).round() as usize).max(1),
            initial: Initial::Uniform,
            coarsen: 1,
            blocks: 50,
            correlation: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.paths < 100 {
            bad.push(format!("paths = {} (need ≥ 100)", self.paths));
        }
        if !(self.dt > 0.0) {
            bad.push("dt must be positive".to_string());
        }
        if !(self.horizon > 0.0) {
            bad.push("horizon must be positive".to_string());
        }
        if !(self.eps >= 0.0) {
            bad.push("ε must be nonnegative".to_string());
        }
        if self.blocks < 30 || self.blocks > self.paths {
            bad.push(format!("blocks = {} (need 30 ≤ blocks ≤ paths)", self.blocks));
        }
        if self.sample_every == 0 || self.coarsen == 0 {
            bad.push("sample_every and coarsen must be positive".to_string());
        }
        if let Some(c) = &self.correlation {
            if let Err(e) = c.f.validate().and(c.g.validate()) {
                bad.push(e.to_string());
            }
            if c.origins == 0 || c.stride < 0.0 {
                bad.push("correlation needs at least one origin and a nonnegative stride".to_string());
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(bad.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub eps: f64,
    pub blocks: usize,
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    pub msd_se: Vec<f64>,
    pub vacf: Vec<f64>,
    pub vacf_se: Vec<f64>,
    pub corr: Option<Vec<f64>>,
    pub corr_se: Option<Vec<f64>>,
    pub max_speed_defect: f64,
}

struct BlockSums {
    msd: Vec<f64>,
    vacf: Vec<f64>,
    corr: Vec<f64>,
    count: f64,
    corr_count: f64,
    defect: f64,
}

fn initial_state(cfg: &EnsembleConfig, id: u64, rng: &mut ChaCha8Rng) -> Result<PathState<f64>> {
    let tau = std::f64::consts::TAU;
    let (z, theta) = match cfg.initial {
        Initial::Fixed { z, theta } => (z, theta),
        Initial::Uniform => {
            let z = [rng.random::<f64>() * tau, rng.random::<f64>() * tau];
            (z, rng.random::<f64>() * tau)
        }
    };
    match &cfg.model {
        SdeModel::Surface(m) => {
            let p = m.normalize(&z, &[theta.cos(), theta.sin()])?;
            Ok(PathState::surface(z, p, id))
        }
        SdeModel::Euclidean(d) => {
            let base = FrameBase::Euclidean(*d);
            let mut f = if *d == 2 { FramePoint::fiber_angle(z, theta) } else { FramePoint::random(&base, rng) };
            if *d != 2 {
                f.z.iter_mut().for_each(|v| *v = 0.0);
            }
            Ok(PathState::frame(f, id))
        }
    }
}

/// Runs the ensemble; paths are grouped into contiguous blocks whose means give the standard errors.
pub fn simulate_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleStats> {
    cfg.validate()?;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let bins = steps / cfg.sample_every + 1;
    let times: Vec<f64> = (0..bins).map(|b| (b * cfg.sample_every) as f64 * cfg.dt).collect();
    let (origin_stride, total_steps) = match &cfg.correlation {
        Some(c) => {
            let stride = (c.stride / cfg.dt).round() as usize;
            (stride, steps + stride * (c.origins - 1))
        }
        None => (0, steps),
    };
    let block_sums: Vec<BlockSums> = (0..cfg.blocks)
        .into_par_iter()
        .map(|b| {
            let lo = b * cfg.paths / cfg.blocks;
            let hi = (b + 1) * cfg.paths / cfg.blocks;
            let mut acc = BlockSums {
                msd: vec![0.0; bins],
                vacf: vec![0.0; bins],
                corr: vec![0.0; bins],
                count: 0.0,
                corr_count: 0.0,
                defect: 0.0,
            };
            for id in lo..hi {
                run_path(cfg, id as u64, steps, total_steps, origin_stride, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let nb = cfg.blocks as f64;
    let reduce = |get: &dyn Fn(&BlockSums) -> (&[f64], f64)| -> (Vec<f64>, Vec<f64>) {
        let means: Vec<Vec<f64>> = block_sums
            .iter()
            .map(|s| {
                let (v, c) = get(s);
                v.iter().map(|x| x / c).collect()
            })
            .collect();
        let mut mean = vec![0.0; bins];
        let mut se = vec![0.0; bins];
        for i in 0..bins {
            let m = means.iter().map(|v| v[i]).sum::<f64>() / nb;
            let var = means.iter().map(|v| (v[i] - m).powi(2)).sum::<f64>() / (nb - 1.0);
            mean[i] = m;
            se[i] = (var / nb).sqrt();
        }
        (mean, se)
    };
    let (msd, msd_se) = reduce(&|s| (&s.msd, s.count));
    let (vacf, vacf_se) = reduce(&|s| (&s.vacf, s.count));
    let (corr, corr_se) = if cfg.correlation.is_some() {
        let (c, e) = reduce(&|s| (&s.corr, s.corr_count));
        (Some(c), Some(e))
    } else {
        (None, None)
    };
    Ok(EnsembleStats {
        paths: cfg.paths,
        horizon: cfg.horizon,
        dt: cfg.dt,
        eps: cfg.eps,
        blocks: cfg.blocks,
        times,
        msd,
        msd_se,
        vacf,
        vacf_se,
        corr,
        corr_se,
        max_speed_defect: block_sums.iter().map(|s| s.defect).fold(0.0, f64::max),
    })
}

fn run_path(cfg: &EnsembleConfig, id: u64, steps: usize, total: usize, stride: usize, acc: &mut BlockSums) -> Result<()> {
    let mut rng = path_rng(cfg.seed, id);
    let mut s = initial_state(cfg, id, &mut rng)?;
    let x0 = s.lift.clone();
    let v0 = s.velocity(&cfg.model);
    let corr = cfg.correlation.as_ref();
    let origins = corr.map_or(0, |c| c.origins);
    let mut g_at: Vec<f64> = Vec::with_capacity(origins);
    let record = |s: &PathState<f64>, i: usize, acc: &mut BlockSums, g_at: &mut Vec<f64>| {
        if i <= steps && i % cfg.sample_every == 0 {
            let b = i / cfg.sample_every;
            acc.msd[b] += s.lift.iter().zip(&x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let v = s.velocity(&cfg.model);
            acc.vacf[b] += v.iter().zip(&v0).map(|(a, b)| a * b).sum::<f64>();
        }
        if let Some(c) = corr {
            let theta = s.theta();
            if stride == 0 {
                if i == 0 {
                    g_at.push(c.g.eval(&s.z, theta));
                }
            } else if i % stride == 0 && i / stride < c.origins {
                g_at.push(c.g.eval(&s.z, theta));
            }
            let fz = if g_at.is_empty() { 0.0 } else { c.f.eval(&s.z, theta) };
            for (j, g) in g_at.iter().enumerate() {
                let lag = i - j * stride;
                if lag <= steps && lag % cfg.sample_every == 0 {
                    acc.corr[lag / cfg.sample_every] += fz * g;
                }
            }
        }
    };
    record(&s, 0, acc, &mut g_at);
    let nd = cfg.model.noise_dim();
    for i in 1..=total {
        let xi = draw_increments(&mut rng, nd, cfg.coarsen, &mut s);
        let draws = s.draws;
        s = step(&cfg.model, &s, cfg.dt, cfg.eps, &xi)?;
        s.draws = draws;
        acc.defect = acc.defect.max(s.speed_defect(&cfg.model)?);
        record(&s, i, acc, &mut g_at);
    }
    acc.count += 1.0;
    acc.corr_count += origins as f64;
    Ok(())
}

/// `E|x_t − x_0|²` on the flat plane for unit speed and direction diffusion `ε ∂_θ²`.
pub fn msd_reference_flat(eps: f64, t: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Invalid("ε must be positive".into()));
    }
    let x = eps * t;
    if x < 1e-3 {
        // Series t² − εt³/3 + ε²t⁴/12 − ε³t⁵/60 avoids the cancellation.
        return Ok(t * t * (1.0 - x / 3.0 + x * x / 12.0 - x * x * x / 60.0));
    }
    Ok(2.0 * t / eps - 2.0 / (eps * eps) * (-(-x).exp_m1()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub rate: f64,
    pub ci: (f64, f64),
    /// Lag window used by the fit.
    pub window: (f64, f64),
    pub points: usize,
    /// The correlation changes sign, so its local peaks were fitted.
    pub envelope: bool,
}

/// Log-linear fit of `|corr|` over the leading lags where it exceeds `3 SE`, weighted by the
/// inverse variance `(corr/SE)²` of `log|corr|`.
///
/// When the correlation changes sign the fit uses one peak per sign lobe. Refused when the
/// correlation stays resolved on most of the last quarter of the horizon, or when fewer than
/// three points are resolved.
pub fn fit_decay(times: &[f64], corr: &[f64], se: &[f64]) -> Result<DecayFit> {
    let n = times.len();
    if corr.len() != n || se.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: corr.len().min(se.len()) });
    }
    let resolved = |i: usize| corr[i].abs() > 3.0 * se[i];
    let tail = (3 * n / 4)..n;
    let still = tail.clone().filter(|&i| resolved(i)).count();
    if 2 * still > tail.len() {
        return Err(Error::Refused(format!(
            "correlation is resolved on {still} of the last {} lags (|corr| = {:.3e} ± {:.1e} at t = {}), no decay resolved",
            tail.len(),
            corr[n - 1].abs(),
            se[n - 1],
            times[n - 1]
        )));
    }
    let positive = (0..n).any(|i| resolved(i) && corr[i] > 0.0);
    let negative = (0..n).any(|i| resolved(i) && corr[i] < 0.0);
    let envelope = positive && negative;
    let idx: Vec<usize> = if envelope {
        let mut peaks = Vec::new();
        let mut start = 0;
        while start < n {
            let sign = corr[start] >= 0.0;
            let mut end = start;
            while end < n && (corr[end] >= 0.0) == sign {
                end += 1;
            }
            let peak = (start..end).max_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs())).expect("nonempty lobe");
            let interior = peak > start || start > 0;
            if resolved(peak) {
                if interior && peak + 1 < end {
                    peaks.push(peak);
                }
            } else if !peaks.is_empty() {
                break;
            }
            start = end;
        }
        peaks
    } else {
        (1..n).take_while(|&i| resolved(i)).collect()
    };
    if idx.len() < 3 {
        return Err(Error::Refused(format!("only {} resolved points above 3 SE, decay not fitted", idx.len())));
    }
    let x: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    let y: Vec<f64> = idx.iter().map(|&i| corr[i].abs().ln()).collect();
    let w: Vec<f64> = idx.iter().map(|&i| (corr[i] / se[i]).powi(2)).collect();
    let (slope, half) = weighted_line(&x, &y, &w)?;
    Ok(DecayFit { rate: -slope, ci: (-slope - half, -slope + half), window: (x[0], x[x.len() - 1]), points: idx.len(), envelope })
}

/// Weighted least-squares slope and its 95% Student-t half-width.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let n = x.len();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("decay fit needs distinct lags".into()));
    }
    let slope = sxy / sxx;
    let sse: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (c - my - slope * (a - mx)).powi(2)).sum();
    let dof = n as f64 - 2.0;
    let se = (sse / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Invalid(e.to_string()))?.inverse_cdf(0.975);
    Ok((slope, t * se))
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub eps: f64,
    pub fit: DecayFit,
    pub gap: f64,
    pub blocks: Vec<(i64, i64)>,
    pub stats: EnsembleStats,
}

#[derive(Debug, Clone)]
pub struct DecayConfig {
    pub eps: f64,
    pub f: Observable,
    pub g: Observable,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub dt: f64,
    pub origins: usize,
    pub stride: f64,
}

impl DecayConfig {
    pub fn new(eps: f64, f: Observable, horizon: f64, paths: usize, seed: u64) -> Self {
        Self { eps, g: f.clone(), f, horizon, paths, seed, dt: 0.01, origins: 20, stride: 1.0 }
    }
}

/// Correlation `E[f(X_{s+t}) g(X_s)]` under the invariant measure on the flat torus and its decay rate.
pub fn correlation_decay(cfg: &DecayConfig) -> Result<DecayReport> {
    let mut e = EnsembleConfig::flat(cfg.eps, cfg.dt, cfg.horizon, cfg.paths, cfg.seed);
    e.correlation = Some(CorrelationSpec { f: cfg.f.clone(), g: cfg.g.clone(), origins: cfg.origins, stride: cfg.stride });
    let stats = simulate_ensemble(&e)?;
    let fit = fit_decay(&stats.times, stats.corr.as_ref().expect("correlation requested"), stats.corr_se.as_ref().expect("correlation requested"))?;
    let mut blocks = cfg.f.blocks();
    blocks.extend(cfg.g.blocks());
    blocks.sort();
    blocks.dedup();
    let gap = spectral_gap(cfg.eps, &blocks)?;
    Ok(DecayReport { eps: cfg.eps, fit, gap, blocks, stats })
}

/// `min −Im λ` over the nonzero eigenvalues of the given torus blocks.
pub fn spectral_gap(eps: f64, blocks: &[(i64, i64)]) -> Result<f64> {
    let mut gap = f64::INFINITY;
    for &k in blocks {
        let ev = eigenvalues_dense(&assemble_torus_block(k, eps, default_truncation(eps))?)?;
        for l in ev {
            if l.norm() > 1e-12 {
                gap = gap.min(-l.im);
            }
        }
    }
    Ok(gap)
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationReport {
    pub eps: Vec<f64>,
    pub median: Vec<f64>,
    /// Log-log slope over the positive-ε points.
    pub exponent: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct DeviationConfig {
    pub eps: Vec<f64>,
    pub horizon: f64,
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub coarsen: usize,
}

/// Median over paths of `sup_{t ≤ T} |x_t − γ(t)|` against the noiseless flat geodesic from the same start.
pub fn geodesic_deviation(cfg: &DeviationConfig) -> Result<DeviationReport> {
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let model = SdeModel::Surface(ManifoldModel::FlatTorus2);
    let median: Vec<f64> = cfg
        .eps
        .iter()
        .map(|&eps| {
            let mut sup: Vec<f64> = (0..cfg.paths)
                .into_par_iter()
                .map(|id| {
                    let mut rng = path_rng(cfg.seed, id as u64);
                    let mut s = PathState::surface([0.0, 0.0], [1.0, 0.0], id as u64);
                    let mut worst: f64 = 0.0;
                    for _ in 0..steps {
                        let xi = draw_increments(&mut rng, 1, cfg.coarsen, &mut s);
                        s = step(&model, &s, cfg.dt, eps, &xi)?;
                        let d = ((s.lift[0] - s.t).powi(2) + s.lift[1].powi(2)).sqrt();
                        worst = worst.max(d);
                    }
                    Ok(worst)
                })
                .collect::<Result<_>>()?;
            sup.sort_by(f64::total_cmp);
            let m = sup.len();
            Ok(if m % 2 == 1 { sup[m / 2] } else { 0.5 * (sup[m / 2 - 1] + sup[m / 2]) })
        })
        .collect::<Result<_>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = cfg.eps.iter().zip(&median).filter(|(e, m)| **e > 0.0 && **m > 0.0).map(|(e, m)| (*e, *m)).unzip();
    let fit = if x.len() >= 3 { Some(loglog_fit(&x, &y)?) } else { None };
    Ok(DeviationReport { eps: cfg.eps.clone(), median, exponent: fit.as_ref().map(|f| f.slope), ci: fit.map(|f| f.ci) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_step_is_the_geodesic_flow() {
        let m = ManifoldModel::Sphere2;
        let p = CospherePoint::new([1.0, 0.3], m.normalize(&[1.0, 0.3], &[0.4, 0.7]).unwrap());
        let model = SdeModel::Surface(m.clone());
        let s = PathState::surface(p.z, p.zeta1, 0);
        let out = step(&model, &s, 0.01, 0.0, &[0.7]).unwrap();
        let want = m.geodesic_flow(&p, 0.01).unwrap();
        assert_eq!(out.z, want.z.to_vec());
        assert_eq!(out.direction, Direction::Covector(want.zeta1));
    }

    #[test]
    fn flat_step_by_hand() {
        let model = SdeModel::Surface(ManifoldModel::FlatTorus2);
        let s = PathState::surface([0.0, 0.0], [1.0, 0.0], 0);
        let out = step(&model, &s, 0.01, 1.0, &[1.0]).unwrap();
        let th = 0.02f64.sqrt();
        assert!((out.theta() - th).abs() < 1e-15);
        assert!((out.z[0] - (0.005 + 0.005 * th.cos())).abs() < 1e-16);
        assert!((out.z[1] - 0.005 * th.sin()).abs() < 1e-16);
    }

    #[test]
    fn rodrigues_matches_plane_rotation() {
        let mut f = FramePoint { z: vec![0.0; 3], zeta: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], chart: Chart::Standard };
        rotate_first_row(&mut f, 3, &[0.3, 0.0]);
        assert!((f.zeta[0] - 0.3f64.cos()).abs() < 1e-15 && (f.zeta[1] - 0.3f64.sin()).abs() < 1e-15);
        assert!((f.zeta[3] + 0.3f64.sin()).abs() < 1e-15 && (f.zeta[4] - 0.3f64.cos()).abs() < 1e-15);
        assert_eq!(&f.zeta[6..], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn frame_stays_orthonormal() {
        let model = SdeModel::Euclidean(3);
        let mut rng = path_rng(7, 0);
        let base = FrameBase::Euclidean(3);
        let mut s = PathState::frame(FramePoint::random(&base, &mut rng), 0);
        for _ in 0..10_000 {
            let xi = draw_increments(&mut rng, 2, 1, &mut s);
            s = step(&model, &s, 0.01, 1.0, &xi).unwrap();
        }
        assert!(s.speed_defect(&model).unwrap() < 1e-12);
        assert_eq!(s.draws, 20_000);
    }

    #[test]
    fn msd_limits() {
        let t = 1e-3;
        assert!((msd_reference_flat(1.0, t).unwrap() / (t * t) - 1.0).abs() < 1e-3);
        let big = 1e4;
        assert!((msd_reference_flat(2.0, big).unwrap() / big - 1.0).abs() < 1e-3);
        assert!(msd_reference_flat(1e8, 1.0).unwrap() < 1e-7);
        assert!(msd_reference_flat(0.0, 1.0).is_err());
        // Both branches agree where they meet.
        let a = msd_reference_flat(1.0, 0.999e-3).unwrap();
        let b = 2.0 * 0.999e-3 - 2.0 * (1.0 - (-0.999e-3f64).exp());
        assert!((a - b).abs() < 1e-12 * a.max(1e-9) + 1e-16);
    }

    #[test]
    fn constant_observable_is_rejected() {
        let o = Observable { terms: vec![TrigTerm { coef: 1.0, k: (0, 0), n: 0, phase: 0.0 }] };
        assert!(o.validate().is_err());
    }

    #[test]
    fn streams_are_independent_of_order() {
        let mut a = path_rng(1, 5);
        let mut b = path_rng(1, 5);
        let _: f64 = path_rng(1, 4).random();
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        assert_ne!(path_rng(1, 5).random::<u64>(), path_rng(1, 6).random::<u64>());
    }
}
