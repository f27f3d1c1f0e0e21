//! Non-Hermitian eigensolvers for torus blocks, with left and right eigenvectors,
//! and the resolvent contour projector.
//!
//! Left eigenvectors use the bilinear pairing: `vᵀ B = λ vᵀ`. Both vectors are stored with unit
//! Euclidean norm and the phase of `v` is chosen so that `pairing = vᵀu` is real and
//! nonnegative; it is then the reciprocal eigenvalue condition number.

use crate::error::{Error, Result};
use crate::linalg::{bilinear, dot, norm2, Tridiagonal, TridiagonalLu};
use crate::operator_assembly::{assemble_torus_block, SpectralBlock};
use faer::{c64, Mat};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

pub const ACCEPT_RESIDUAL: f64 = 1e-9;
pub const DEFECTIVE_PAIRING: f64 = 1e-10;
pub const MAX_DENSE_DIM: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub lambda: c64,
    pub right: Vec<c64>,
    pub left: Vec<c64>,
    /// `‖(B − λ)u‖ / ‖u‖`.
    pub residual: f64,
    /// `‖vᵀ(B − λ)‖ / ‖v‖`.
    pub left_residual: f64,
    /// `vᵀu` with unit `u`, `v`.
    pub pairing: c64,
}

impl EigenPair {
    pub fn accepted(&self) -> bool {
        self.residual < ACCEPT_RESIDUAL && self.left_residual < ACCEPT_RESIDUAL
    }

    pub fn defective(&self) -> bool {
        self.pairing.norm() <= DEFECTIVE_PAIRING
    }

    /// Rank-one spectral projector `u vᵀ / (vᵀu)`.
    pub fn projector(&self) -> Mat<c64> {
        let n = self.right.len();
        let p = self.pairing;
        Mat::from_fn(n, n, |i, j| self.right[i] * self.left[j] / p)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenRecord {
    pub k: (i64, i64),
    pub eps: f64,
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub residual: f64,
}

pub fn eigen_records(block: &SpectralBlock<f64>, pairs: &[EigenPair]) -> Vec<EigenRecord> {
    pairs
        .iter()
        .map(|p| EigenRecord {
            k: block.k,
            eps: block.epsilon,
            lambda_re: p.lambda.re,
            lambda_im: p.lambda.im,
            residual: p.residual.max(p.left_residual),
        })
        .collect()
}

/// Orders eigenvalues from least to most damped, ties by real part.
pub fn spectral_order(a: &c64, b: &c64) -> std::cmp::Ordering {
    b.im.total_cmp(&a.im).then(a.re.total_cmp(&b.re))
}

fn normalize(v: &mut [c64]) {
    let n = norm2(v);
    let (imax, _) = v.iter().enumerate().fold((0, -1.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc });
    let phase = if v[imax].norm() > 0.0 { v[imax].conj() / v[imax].norm() } else { c64::new(1.0, 0.0) };
    for z in v.iter_mut() {
        *z = *z * phase / n;
    }
}

fn finish_pair(a: &Tridiagonal<f64>, lambda: c64, mut u: Vec<c64>, mut v: Vec<c64>) -> EigenPair {
    normalize(&mut u);
    let nv = norm2(&v);
    for z in v.iter_mut() {
        *z /= nv;
    }
    let p = bilinear(&v, &u);
    if p.norm() > 0.0 {
        let ph = p.conj() / p.norm();
        for z in v.iter_mut() {
            *z *= ph;
        }
    }
    let pairing = bilinear(&v, &u);
    let au = a.matvec(&u);
    let res: Vec<c64> = au.iter().zip(&u).map(|(x, y)| x - lambda * y).collect();
    let va = a.vecmat(&v);
    let lres: Vec<c64> = va.iter().zip(&v).map(|(x, y)| x - lambda * y).collect();
    EigenPair { lambda, right: u, left: v, residual: norm2(&res), left_residual: norm2(&lres), pairing }
}

fn real_matrix(block: &SpectralBlock<f64>) -> Mat<f64> {
    let (diag, up, lo, _) = block.real_reduction();
    let n = block.dim();
    Mat::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if j == i + 1 {
            up
        } else if i == j + 1 {
            lo
        } else {
            0.0
        }
    })
}

fn check_dim(n: usize) -> Result<()> {
    if n > MAX_DENSE_DIM {
        return Err(Error::Invalid(format!("dense solver limited to dimension {MAX_DENSE_DIM}, got {n}")));
    }
    Ok(())
}

/// Complete spectrum of a torus block.
///
/// The block is similar to `−i R` with `R` real tridiagonal, so the eigenproblem is solved in
/// real arithmetic. That keeps the `λ ↦ −λ̄` pairing of the spectrum exact and is markedly
/// more accurate than a complex solve for the severely non-normal small-`ε` blocks.
pub fn eig_dense(block: &SpectralBlock<f64>) -> Result<Vec<EigenPair>> {
    check_dim(block.dim())?;
    let r = real_matrix(block);
    let evd = r.eigen().map_err(|e| Error::Eigen(format!("real Schur iteration did not converge: {e:?}")))?;
    let u = block.reduction_phases();
    let n = block.dim();
    let sign = |i: usize| if block.mode(i).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let s: Vec<c64> = evd.S().column_vector().iter().copied().collect();
    let w = evd.U();
    let mut pairs: Vec<EigenPair> = (0..n)
        .map(|j| {
            let mu = s[j];
            let lambda = c64::new(mu.im, -mu.re);
            let right: Vec<c64> = (0..n).map(|i| u[i] * w[(i, j)]).collect();
            let left: Vec<c64> = (0..n).map(|i| w[(i, j)] * sign(i) / u[i]).collect();
            finish_pair(&block.matrix, lambda, right, left)
        })
        .collect();
    pairs.sort_by(|a, b| spectral_order(&a.lambda, &b.lambda));
    Ok(pairs)
}

/// Eigenvalues only, through the same real reduction.
pub fn eigenvalues_dense(block: &SpectralBlock<f64>) -> Result<Vec<c64>> {
    check_dim(block.dim())?;
    let r = real_matrix(block);
    let mut ev: Vec<c64> = r
        .eigenvalues()
        .map_err(|e| Error::Eigen(format!("real Schur iteration did not converge: {e:?}")))?
        .into_iter()
        .map(|mu| c64::new(mu.im, -mu.re))
        .collect();
    ev.sort_by(spectral_order);
    Ok(ev)
}

/// General dense complex eigensolver; left vectors come from the transposed problem.
pub fn eig_general(a: &Mat<c64>) -> Result<Vec<EigenPair>> {
    let n = a.nrows();
    check_dim(n)?;
    let right = a.eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let left = a.transpose().to_owned().eigen().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let sr: Vec<c64> = right.S().column_vector().iter().copied().collect();
    let sl: Vec<c64> = left.S().column_vector().iter().copied().collect();
    let matches = match_sets(&sr, &sl);
    let dense = DenseOp(a);
    let mut pairs: Vec<EigenPair> = (0..n)
        .map(|j| {
            let u: Vec<c64> = (0..n).map(|i| right.U()[(i, j)]).collect();
            let v: Vec<c64> = (0..n).map(|i| left.U()[(i, matches[j].0)]).collect();
            dense.finish(sr[j], u, v)
        })
        .collect();
    pairs.sort_by(|a, b| spectral_order(&a.lambda, &b.lambda));
    Ok(pairs)
}

struct DenseOp<'a>(&'a Mat<c64>);

impl DenseOp<'_> {
    fn finish(&self, lambda: c64, mut u: Vec<c64>, mut v: Vec<c64>) -> EigenPair {
        let a = self.0;
        let n = a.nrows();
        normalize(&mut u);
        let nv = norm2(&v);
        v.iter_mut().for_each(|z| *z /= nv);
        let p = bilinear(&v, &u);
        if p.norm() > 0.0 {
            let ph = p.conj() / p.norm();
            v.iter_mut().for_each(|z| *z *= ph);
        }
        let au: Vec<c64> = (0..n).map(|i| (0..n).map(|j| a[(i, j)] * u[j]).sum::<c64>() - lambda * u[i]).collect();
        let va: Vec<c64> = (0..n).map(|j| (0..n).map(|i| v[i] * a[(i, j)]).sum::<c64>() - lambda * v[j]).collect();
        EigenPair { lambda, residual: norm2(&au), left_residual: norm2(&va), pairing: bilinear(&v, &u), right: u, left: v }
    }
}

/// Greedy nearest-neighbour matching of `a` into `b`; returns `(index in b, distance)` per entry of `a`.
pub fn match_sets(a: &[c64], b: &[c64]) -> Vec<(usize, f64)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(a.len() * b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            cand.push(((x - y).norm(), i, j));
        }
    }
    cand.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut out = vec![(usize::MAX, f64::INFINITY); a.len()];
    let mut used = vec![false; b.len()];
    let mut left = a.len().min(b.len());
    for (d, i, j) in cand {
        if left == 0 {
            break;
        }
        if out[i].0 == usize::MAX && !used[j] {
            out[i] = (j, d);
            used[j] = true;
            left -= 1;
        }
    }
    out
}

/// Largest distance in an optimal-ish one-to-one matching between two spectra.
pub fn spectral_distance(a: &[c64], b: &[c64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    match_sets(a, b).iter().map(|m| m.1).fold(0.0, f64::max)
}

/// Two-sided nearest-point distance over the leading `count` entries of each spectrum.
/// Both inputs must be sorted by [`spectral_order`]; the tails may differ in length.
pub fn leading_distance(a: &[c64], b: &[c64], count: usize) -> f64 {
    let one_way = |x: &[c64], y: &[c64]| {
        x.iter()
            .take(count)
            .map(|z| y.iter().map(|w| (z - w).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { f64::INFINITY };
    }
    one_way(a, b).max(one_way(b, a))
}

/// Operator that supports shifted solves, for shift-invert iterations.
pub trait ShiftInvertible: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[c64]) -> Vec<c64>;
    fn apply_transpose(&self, x: &[c64]) -> Vec<c64>;
    fn factor(&self, sigma: c64) -> Result<Box<dyn ShiftedSolve + '_>>;
}

pub trait ShiftedSolve {
    /// `(A − σ)⁻¹ b` in place.
    fn solve(&self, b: &mut [c64]);
    /// `(A − σ)⁻ᵀ b` in place.
    fn solve_transpose(&self, b: &mut [c64]);
}

impl ShiftedSolve for TridiagonalLu<f64> {
    fn solve(&self, b: &mut [c64]) {
        self.solve_in_place(b);
    }
    fn solve_transpose(&self, b: &mut [c64]) {
        self.solve_transpose_in_place(b);
    }
}

impl ShiftInvertible for Tridiagonal<f64> {
    fn dim(&self) -> usize {
        Tridiagonal::dim(self)
    }
    fn apply(&self, x: &[c64]) -> Vec<c64> {
        self.matvec(x)
    }
    fn apply_transpose(&self, x: &[c64]) -> Vec<c64> {
        self.vecmat(x)
    }
    fn factor(&self, sigma: c64) -> Result<Box<dyn ShiftedSolve + '_>> {
        Ok(Box::new(self.shifted(sigma).lu()?))
    }
}

#[derive(Debug, Clone)]
pub struct ArnoldiOptions {
    pub subspace: usize,
    pub count: usize,
    pub max_restarts: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub max_shift_retries: usize,
}

impl ArnoldiOptions {
    pub fn new(count: usize) -> Self {
        Self {
            subspace: (2 * count + 20).max(30),
            count,
            max_restarts: 50,
            tolerance: ACCEPT_RESIDUAL,
            seed: 0x5EED,
            max_shift_retries: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArnoldiResult {
    pub pairs: Vec<EigenPair>,
    pub shift: c64,
    pub shift_retries: usize,
    pub restarts: usize,
}

/// Eigenpairs of `A` nearest to `σ` through Arnoldi on `(A − σ)⁻¹` with explicit restarts.
///
/// A singular shift is moved off the spectrum by a small, growing perturbation and retried.
pub fn shift_invert_arnoldi(op: &dyn ShiftInvertible, sigma: c64, opts: &ArnoldiOptions) -> Result<ArnoldiResult> {
    if opts.count == 0 {
        return Ok(ArnoldiResult { pairs: vec![], shift: sigma, shift_retries: 0, restarts: 0 });
    }
    let n = op.dim();
    let m = opts.subspace.min(n);
    if m < opts.count + 2 && m < n {
        return Err(Error::Invalid(format!("subspace {m} too small for {} eigenpairs", opts.count)));
    }
    let mut shift = sigma;
    let mut retries = 0;
    let solver = loop {
        match op.factor(shift) {
            Ok(s) => break s,
            Err(Error::Singular(_)) if retries < opts.max_shift_retries => {
                retries += 1;
                let scale = 1e-7 * 10f64.powi(retries as i32 - 1) * (1.0 + shift.norm());
                shift = sigma + c64::from_polar(scale, 0.7);
            }
            Err(e) => return Err(e),
        }
    };
    let count = opts.count.min(n);
    let (right, restarts_r) = arnoldi_side(op, &*solver, shift, m, count, opts, false)?;
    let (left, restarts_l) = arnoldi_side(op, &*solver, shift, m, count, opts, true)?;
    let lr: Vec<c64> = right.iter().map(|p| p.0).collect();
    let ll: Vec<c64> = left.iter().map(|p| p.0).collect();
    let mt = match_sets(&lr, &ll);
    let mut pairs = Vec::with_capacity(count);
    for (i, (lambda, u)) in right.into_iter().enumerate() {
        let v = left[mt[i].0].1.clone();
        let mut p = finish_generic(op, lambda, u, v);
        if !p.accepted() {
            // Rayleigh-type refinement of λ from the pair.
            let bu = op.apply(&p.right);
            let lam = bilinear(&p.left, &bu) / bilinear(&p.left, &p.right);
            p = finish_generic(op, lam, p.right, p.left);
        }
        pairs.push(p);
    }
    pairs.sort_by(|a, b| (a.lambda - sigma).norm().total_cmp(&(b.lambda - sigma).norm()));
    let worst = pairs.iter().map(|p| p.residual.max(p.left_residual)).fold(0.0, f64::max);
    if worst >= opts.tolerance {
        return Err(Error::Stagnation { restarts: restarts_r.max(restarts_l), residual: worst });
    }
    Ok(ArnoldiResult { pairs, shift, shift_retries: retries, restarts: restarts_r.max(restarts_l) })
}

fn finish_generic(op: &dyn ShiftInvertible, lambda: c64, mut u: Vec<c64>, mut v: Vec<c64>) -> EigenPair {
    normalize(&mut u);
    let nv = norm2(&v);
    v.iter_mut().for_each(|z| *z /= nv);
    let p = bilinear(&v, &u);
    if p.norm() > 0.0 {
        let ph = p.conj() / p.norm();
        v.iter_mut().for_each(|z| *z *= ph);
    }
    let au: Vec<c64> = op.apply(&u).iter().zip(&u).map(|(x, y)| x - lambda * y).collect();
    let va: Vec<c64> = op.apply_transpose(&v).iter().zip(&v).map(|(x, y)| x - lambda * y).collect();
    EigenPair { lambda, residual: norm2(&au), left_residual: norm2(&va), pairing: bilinear(&v, &u), right: u, left: v }
}

type RitzSet = Vec<(c64, Vec<c64>)>;

fn arnoldi_side(
    op: &dyn ShiftInvertible,
    solver: &dyn ShiftedSolve,
    shift: c64,
    m: usize,
    count: usize,
    opts: &ArnoldiOptions,
    transpose: bool,
) -> Result<(RitzSet, usize)> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ if transpose { 0x9E37 } else { 0 });
    let mut start: Vec<c64> = (0..n)
        .map(|_| c64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let apply = |x: &[c64]| if transpose { op.apply_transpose(x) } else { op.apply(x) };
    let mut worst = f64::INFINITY;
    for restart in 0..=opts.max_restarts {
        let nrm = norm2(&start);
        let mut basis: Vec<Vec<c64>> = vec![start.iter().map(|z| z / nrm).collect()];
        let mut h = vec![vec![c64::new(0.0, 0.0); m]; m + 1];
        let mut dim = m;
        for j in 0..m {
            let mut w = basis[j].clone();
            if transpose {
                solver.solve_transpose(&mut w);
            } else {
                solver.solve(&mut w);
            }
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = dot(b, &w);
                    h[i][j] += c;
                    for (x, y) in w.iter_mut().zip(b) {
                        *x -= c * y;
                    }
                }
            }
            let beta = norm2(&w);
            h[j + 1][j] = c64::new(beta, 0.0);
            let hn: f64 = (0..=j).map(|i| h[i][j].norm()).fold(0.0, f64::max);
            if beta <= 1e-14 * hn.max(1e-300) || j + 1 == n {
                dim = j + 1;
                break;
            }
            if j + 1 < m {
                basis.push(w.iter().map(|z| z / beta).collect());
            }
        }
        let hm = Mat::<c64>::from_fn(dim, dim, |i, j| h[i][j]);
        let evd = hm.eigen().map_err(|e| Error::Eigen(format!("Hessenberg eigensolve: {e:?}")))?;
        let theta: Vec<c64> = evd.S().column_vector().iter().copied().collect();
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| theta[b].norm().total_cmp(&theta[a].norm()).then(a.cmp(&b)));
        let take = count.min(dim);
        let mut ritz = Vec::with_capacity(take);
        worst = 0.0;
        for &idx in order.iter().take(take) {
            let lambda = shift + c64::new(1.0, 0.0) / theta[idx];
            let mut y = vec![c64::new(0.0, 0.0); n];
            for (i, b) in basis.iter().enumerate().take(dim) {
                let s = evd.U()[(i, idx)];
                for (yy, bb) in y.iter_mut().zip(b) {
                    *yy += s * bb;
                }
            }
            let ny = norm2(&y);
            y.iter_mut().for_each(|z| *z /= ny);
            let r: Vec<c64> = apply(&y).iter().zip(&y).map(|(a, b)| a - lambda * b).collect();
            worst = worst.max(norm2(&r));
            ritz.push((lambda, y));
        }
        if worst < opts.tolerance * 0.5 || dim < m {
            return Ok((ritz, restart));
        }
        start = vec![c64::new(0.0, 0.0); n];
        for (_, y) in &ritz {
            for (s, v) in start.iter_mut().zip(y) {
                *s += v;
            }
        }
    }
    Err(Error::Stagnation { restarts: opts.max_restarts, residual: worst })
}

#[derive(Debug, Clone)]
pub struct ProjectorEstimate {
    pub center: c64,
    pub radius: f64,
    pub nodes: usize,
    pub matrix: Mat<c64>,
    pub trace: c64,
    pub rank: usize,
    /// `‖Π² − Π‖_F`.
    pub idempotency: f64,
    /// Distance from the spectrum to the contour, when the spectrum was checked.
    pub contour_distance: Option<f64>,
    pub enclosed: Option<usize>,
}

pub const CONTOUR_MARGIN: f64 = 0.05;
const NODE_CHUNKS: usize = 8;

/// Riesz projector `(1/2πi) ∮ (z − B)⁻¹ dz` over the circle `|z − λ₀| = r₀`,
/// by the trapezoid rule on `nodes` equispaced points.
pub fn contour_projector(block: &SpectralBlock<f64>, center: c64, radius: f64, nodes: usize) -> Result<ProjectorEstimate> {
    let spectrum = if block.dim() <= MAX_DENSE_DIM { Some(eigenvalues_dense(block)?) } else { None };
    contour_projector_with(&block.matrix, center, radius, nodes, spectrum.as_deref())
}

pub fn contour_projector_with(
    a: &Tridiagonal<f64>,
    center: c64,
    radius: f64,
    nodes: usize,
    spectrum: Option<&[c64]>,
) -> Result<ProjectorEstimate> {
    if !(radius > 0.0) || nodes == 0 {
        return Err(Error::Invalid("contour needs a positive radius and at least one node".into()));
    }
    let (contour_distance, enclosed) = match spectrum {
        Some(ev) => {
            let dist = ev.iter().map(|l| ((l - center).norm() - radius).abs()).fold(f64::INFINITY, f64::min);
            let inside = ev.iter().filter(|l| (*l - center).norm() < radius).count();
            if dist < CONTOUR_MARGIN * radius {
                return Err(Error::NearContour { distance: dist, minimum: CONTOUR_MARGIN * radius });
            }
            (Some(dist), Some(inside))
        }
        None => (None, None),
    };
    let n = a.dim();
    let chunk = nodes.div_ceil(NODE_CHUNKS);
    let partials: Vec<Result<Vec<c64>>> = (0..NODE_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![c64::new(0.0, 0.0); n * n];
            for j in c * chunk..((c + 1) * chunk).min(nodes) {
                let phase = c64::from_polar(1.0, std::f64::consts::TAU * j as f64 / nodes as f64);
                let z = center + phase * radius;
                // (z − A) = −(A − z)
                let lu = a.shifted(z).lu()?;
                let w = -phase * radius / nodes as f64;
                let mut col = vec![c64::new(0.0, 0.0); n];
                for cidx in 0..n {
                    col.iter_mut().for_each(|x| *x = c64::new(0.0, 0.0));
                    col[cidx] = c64::new(1.0, 0.0);
                    lu.solve_in_place(&mut col);
                    for r in 0..n {
                        acc[r * n + cidx] += w * col[r];
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut sum = vec![c64::new(0.0, 0.0); n * n];
    for p in partials {
        let p = p?;
        for (s, x) in sum.iter_mut().zip(&p) {
            *s += x;
        }
    }
    let matrix = Mat::from_fn(n, n, |i, j| sum[i * n + j]);
    let trace = (0..n).map(|i| matrix[(i, i)]).sum();
    let sq = &matrix * &matrix;
    let idempotency = frobenius(&(&sq - &matrix));
    let sv = matrix.singular_values().map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let top = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| s > 1e-6 * top.max(1e-300) && s > 1e-9).count();
    Ok(ProjectorEstimate { center, radius, nodes, matrix, trace, rank, idempotency, contour_distance, enclosed })
}

pub fn frobenius(m: &Mat<c64>) -> f64 {
    let mut s = 0.0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            s += m[(i, j)].norm_sqr();
        }
    }
    s.sqrt()
}

#[derive(Debug, Clone)]
pub struct ProjectorDerivative {
    /// Central difference at the finest step `δ/4`.
    pub derivative: Mat<c64>,
    pub steps: [f64; 3],
    /// `‖D(δ) − D(δ/2)‖_F` and `‖D(δ/2) − D(δ/4)‖_F`.
    pub differences: [f64; 2],
    pub ratio: Option<f64>,
    pub consistent: bool,
}

pub const RICHARDSON_TARGET: f64 = 4.0;
pub const RICHARDSON_SLACK: f64 = 0.15;
const DERIVATIVE_NOISE: f64 = 1e-9;

/// Central differences of `ε ↦ Π_ε` at steps `δ, δ/2, δ/4` and their Richardson ratio.
pub fn projector_derivative(
    k: (i64, i64),
    epsilon: f64,
    n_modes: usize,
    center: c64,
    radius: f64,
    delta: f64,
    nodes: usize,
) -> Result<ProjectorDerivative> {
    if !(delta > 0.0) || delta >= epsilon.abs().max(f64::MIN_POSITIVE) && epsilon > 0.0 && delta >= epsilon {
        return Err(Error::Invalid("step must be positive and below ε".into()));
    }
    let steps = [delta, delta / 2.0, delta / 4.0];
    let projector = |e: f64| -> Result<Mat<c64>> {
        let b = assemble_torus_block(k, e, n_modes)?;
        match contour_projector(&b, center, radius, nodes) {
            Err(Error::NearContour { distance, minimum }) => Err(Error::Refused(format!(
                "an eigenvalue crosses the contour at ε = {e:e} (distance {distance:e} < {minimum:e})"
            ))),
            other => other.map(|p| p.matrix),
        }
    };
    let base = projector(epsilon)?;
    let mut d = Vec::with_capacity(3);
    for &h in &steps {
        let plus = projector(epsilon + h)?;
        let minus = projector(epsilon - h)?;
        let mut diff = &plus - &minus;
        diff *= faer::Scale(c64::new(0.5 / h, 0.0));
        d.push(diff);
    }
    let a = frobenius(&(&d[0] - &d[1]));
    let b = frobenius(&(&d[1] - &d[2]));
    let scale = 1.0 + frobenius(&d[2]) + frobenius(&base);
    let (ratio, consistent) = if a <= DERIVATIVE_NOISE * scale && b <= DERIVATIVE_NOISE * scale {
        (None, true)
    } else {
        let r = a / b;
        (Some(r), (r - RICHARDSON_TARGET).abs() <= RICHARDSON_SLACK * RICHARDSON_TARGET)
    };
    Ok(ProjectorDerivative { derivative: d.pop().expect("three steps"), steps, differences: [a, b], ratio, consistent })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_block_spectrum_is_exact() {
        let b = assemble_torus_block((0, 0), 0.2, 3).unwrap();
        let ev = eig_dense(&b).unwrap();
        let mut want: Vec<c64> = (-3..=3).map(|n: i32| c64::new(0.0, -0.2 * (n * n) as f64)).collect();
        want.sort_by(spectral_order);
        for (p, w) in ev.iter().zip(&want) {
            assert!((p.lambda - w).norm() < 1e-13);
            assert!(p.accepted());
        }
    }

    #[test]
    fn two_by_two_quadratic_oracle() {
        // λ² + iελ − 1/4 = 0 at ε = 0.1.
        let a = Mat::<c64>::from_fn(2, 2, |i, j| match (i, j) {
            (1, 1) => c64::new(0.0, -0.1),
            (0, 0) => c64::new(0.0, 0.0),
            _ => c64::new(0.5, 0.0),
        });
        let ev = eig_general(&a).unwrap();
        let want = [c64::new(-0.49749371855330997737, -0.05), c64::new(0.49749371855330997737, -0.05)];
        for (p, w) in ev.iter().zip(&want) {
            assert!((p.lambda - w).norm() < 1e-14, "{:?}", p.lambda);
            assert!(p.accepted());
        }
    }

    #[test]
    fn five_by_five_dense_oracle() {
        let b = assemble_torus_block((1, 0), 0.1, 2).unwrap();
        let ev = eig_dense(&b).unwrap();
        let lead = [c64::new(-0.84582355155826971, -0.112657983093318105), c64::new(0.84582355155826971, -0.112657983093318105)];
        for (p, w) in ev.iter().zip(&lead) {
            assert!((p.lambda - w).norm() < 1e-14, "{:?}", p.lambda);
        }
        assert!((ev[2].lambda - c64::new(-0.476969600708472825, -0.25)).norm() < 1e-14);
    }

    #[test]
    fn left_vectors_match_right_vectors_for_symmetric_blocks() {
        // k₂ = 0 makes the block complex symmetric, so v ∝ u.
        let b = assemble_torus_block((1, 0), 0.3, 6).unwrap();
        for p in eig_dense(&b).unwrap() {
            let c = dot(&p.right, &p.left);
            assert!((c.norm() - 1.0).abs() < 1e-10);
            assert!(p.pairing.im.abs() < 1e-14 && p.pairing.re > 0.0);
        }
    }

    #[test]
    fn arnoldi_zero_count_is_empty() {
        let b = assemble_torus_block((1, 0), 0.1, 8).unwrap();
        let r = shift_invert_arnoldi(&b.matrix, c64::new(0.0, 0.0), &ArnoldiOptions::new(0)).unwrap();
        assert!(r.pairs.is_empty());
    }

    #[test]
    fn singular_shift_is_retried() {
        let b = assemble_torus_block((0, 0), 0.2, 8).unwrap();
        let r = shift_invert_arnoldi(&b.matrix, c64::new(0.0, 0.0), &ArnoldiOptions::new(1)).unwrap();
        assert!(r.shift_retries >= 1);
        assert!(r.shift != c64::new(0.0, 0.0));
        assert!(r.pairs[0].lambda.norm() < 1e-12);
    }

    #[test]
    fn empty_contour_gives_zero_projector() {
        let b = assemble_torus_block((1, 0), 0.1, 16).unwrap();
        let p = contour_projector(&b, c64::new(3.0, 2.0), 0.5, 64).unwrap();
        assert!(frobenius(&p.matrix) <= 1e-9);
        assert_eq!(p.enclosed, Some(0));
    }

    #[test]
    fn near_contour_is_refused() {
        let b = assemble_torus_block((0, 0), 0.2, 4).unwrap();
        let e = contour_projector(&b, c64::new(0.0, -0.2), 0.2, 64).unwrap_err();
        assert!(matches!(e, Error::NearContour { .. }));
    }

    #[test]
    fn matching_is_one_to_one() {
        let a = [c64::new(0.0, 0.0), c64::new(0.0, 0.0), c64::new(1.0, 0.0)];
        let b = [c64::new(1.0, 0.0), c64::new(0.0, 1e-9), c64::new(0.0, 0.0)];
        let m = match_sets(&a, &b);
        let mut used: Vec<usize> = m.iter().map(|x| x.0).collect();
        used.sort();
        assert_eq!(used, vec![0, 1, 2]);
        assert!(spectral_distance(&a, &b) <= 1e-9);
    }

    #[test]
    fn leading_distance_ignores_the_tail() {
        let a = [c64::new(0.0, -0.1), c64::new(1.0, -0.5), c64::new(3.0, -9.0)];
        let b = [c64::new(1.0, -0.5), c64::new(0.0, -0.1), c64::new(-2.0, -8.0), c64::new(5.0, -9.5)];
        assert_eq!(leading_distance(&a, &b, 2), 0.0);
        assert!(leading_distance(&a, &b, 3) > 1.0);
        assert_eq!(leading_distance(&a, &[], 2), f64::INFINITY);
    }
}
