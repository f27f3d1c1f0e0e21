//! Vector fields on the orthonormal coframe bundle and numerical checks of their algebra.
//!
//! A frame point carries chart coordinates `z` and a `d × d` matrix `ζ` whose row `k` holds the
//! components `ζ^k_j` of the covector `ζ(e_k)`. Orthonormality means `ζ G⁻¹ ζᵀ = I`.
//! Fields act on [`TestFunction`]s through Taylor jets, so nested applications and brackets
//! are exact up to rounding.

use crate::error::{Error, Result};
use crate::geometry::{dormand_prince, Chart, ManifoldModel, DEFAULT_ATOL};
use crate::jet::{Analytic, Jet, JetSpace};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use std::collections::BTreeMap;
use std::sync::Arc;

pub const DEFAULT_SEED: u64 = 0xC0FFEE;
pub const IDENTITY_TOLERANCE: f64 = 1e-6;

/// Base manifold underneath the frame bundle.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameBase<T> {
    Surface(ManifoldModel<T>),
    /// Flat `ℝ^d` with the identity metric.
    Euclidean(usize),
}

impl<T: Real> FrameBase<T> {
    pub fn dim(&self) -> usize {
        match self {
            FrameBase::Surface(m) => m.dim(),
            FrameBase::Euclidean(d) => *d,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, FrameBase::Euclidean(_) | FrameBase::Surface(ManifoldModel::FlatTorus2))
    }

    fn inverse_metric<A: Analytic<T>>(&self, z: &[A]) -> Vec<A> {
        match self {
            FrameBase::Surface(m) => m.metric_inverse_generic(z).to_vec(),
            FrameBase::Euclidean(d) => identity(&z[0], *d),
        }
    }

    fn metric_values(&self, z: &[T]) -> Vec<T> {
        match self {
            FrameBase::Surface(m) => m.metric_generic(z).to_vec(),
            FrameBase::Euclidean(d) => identity(&z[0], *d),
        }
    }

    fn christoffel<A: Analytic<T>>(&self, z: &[A]) -> Vec<A> {
        match self {
            FrameBase::Surface(m) => m.christoffel_generic(z).to_vec(),
            FrameBase::Euclidean(d) => vec![z[0].lift(T::zero()); d * d * d],
        }
    }

    fn check(&self, z: &[T]) -> Result<()> {
        match self {
            FrameBase::Surface(m) => m.check_domain(&[z[0], z[1]]),
            FrameBase::Euclidean(_) => Ok(()),
        }
    }

    /// Box that random base points are drawn from.
    fn sample_box(&self) -> Vec<(f64, f64)> {
        let tau = std::f64::consts::TAU;
        match self {
            FrameBase::Euclidean(d) => vec![(-1.0, 1.0); *d],
            FrameBase::Surface(ManifoldModel::FlatTorus2) => vec![(0.0, tau); 2],
            FrameBase::Surface(ManifoldModel::Sphere2) => {
                let q = std::f64::consts::FRAC_PI_4;
                vec![(q, 3.0 * q), (-std::f64::consts::PI, std::f64::consts::PI)]
            }
            FrameBase::Surface(ManifoldModel::RevolutionSurface(p)) => match p {
                crate::geometry::Profile::Polynomial { domain, .. } => {
                    vec![(domain.0.as_f64(), domain.1.as_f64()), (0.0, tau)]
                }
                crate::geometry::Profile::Cosine(_) => vec![(0.0, tau); 2],
            },
        }
    }
}

fn identity<T: Real, A: Analytic<T>>(seed: &A, d: usize) -> Vec<A> {
    (0..d * d).map(|i| seed.lift(if i % (d + 1) == 0 { T::one() } else { T::zero() })).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePoint<T> {
    pub z: Vec<T>,
    /// Row-major `d × d`; row `k` is `ζ(e_{k+1})`.
    pub zeta: Vec<T>,
    pub chart: Chart,
}

impl<T: Real> FramePoint<T> {
    pub fn dim(&self) -> usize {
        self.z.len()
    }

    pub fn row(&self, k: usize) -> &[T] {
        let d = self.dim();
        &self.zeta[k * d..(k + 1) * d]
    }

    /// `ζ G⁻¹ ζᵀ`, which is the identity for an orthonormal coframe.
    pub fn gram(&self, base: &FrameBase<T>) -> Vec<T> {
        let d = self.dim();
        let gi = base.inverse_metric(&self.z);
        let mut out = vec![T::zero(); d * d];
        for a in 0..d {
            for b in 0..d {
                let mut s = T::zero();
                for i in 0..d {
                    for j in 0..d {
                        s += self.zeta[a * d + i] * gi[i * d + j] * self.zeta[b * d + j];
                    }
                }
                out[a * d + b] = s;
            }
        }
        out
    }

    pub fn orthonormality_defect(&self, base: &FrameBase<T>) -> T {
        let d = self.dim();
        self.gram(base)
            .iter()
            .enumerate()
            .map(|(i, &g)| (g - if i % (d + 1) == 0 { T::one() } else { T::zero() }).abs())
            .fold(T::zero(), T::max)
    }

    /// Flat `d = 2` frame at fiber angle `θ`, oriented so that `V₁₂ = ∂_θ`.
    pub fn fiber_angle(z: [T; 2], theta: T) -> Self {
        let (s, c) = theta.sin_cos();
        Self { z: z.to_vec(), zeta: vec![c, s, s, -c], chart: Chart::Standard }
    }

    /// Gram–Schmidt with respect to `G⁻¹`, rows in order.
    pub fn reorthonormalize(&mut self, base: &FrameBase<T>) {
        let d = self.dim();
        let gi = base.inverse_metric(&self.z);
        let ip = |a: &[T], b: &[T]| {
            let mut s = T::zero();
            for i in 0..d {
                for j in 0..d {
                    s += a[i] * gi[i * d + j] * b[j];
                }
            }
            s
        };
        for k in 0..d {
            let mut row: Vec<T> = self.row(k).to_vec();
            for _ in 0..2 {
                for q in 0..k {
                    let prev: Vec<T> = self.row(q).to_vec();
                    let c = ip(&row, &prev);
                    for (r, p) in row.iter_mut().zip(&prev) {
                        *r -= c * *p;
                    }
                }
            }
            let n = ip(&row, &row).sqrt();
            for (j, r) in row.iter().enumerate() {
                self.zeta[k * d + j] = *r / n;
            }
        }
    }

    /// Uniform base point in the sampling box and a Haar-random orthonormal coframe.
    pub fn random(base: &FrameBase<T>, rng: &mut impl Rng) -> Self {
        let d = base.dim();
        let z: Vec<T> =
            base.sample_box().iter().map(|&(lo, hi)| T::lit(lo + (hi - lo) * rng.random::<f64>())).collect();
        let q = random_orthogonal::<T>(d, rng);
        // ζ = Q Lᵀ with G = L Lᵀ gives ζ G⁻¹ ζᵀ = Q Qᵀ = I.
        let l = cholesky(&base.metric_values(&z), d);
        let mut zeta = vec![T::zero(); d * d];
        for a in 0..d {
            for j in 0..d {
                let mut s = T::zero();
                for i in 0..d {
                    s += q[a * d + i] * l[j * d + i];
                }
                zeta[a * d + j] = s;
            }
        }
        Self { z, zeta, chart: Chart::Standard }
    }
}

fn random_orthogonal<T: Real>(d: usize, rng: &mut impl Rng) -> Vec<T> {
    let mut m: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    for k in 0..d {
        for _ in 0..2 {
            for q in 0..k {
                let c: f64 = (0..d).map(|j| m[k * d + j] * m[q * d + j]).sum();
                for j in 0..d {
                    m[k * d + j] -= c * m[q * d + j];
                }
            }
        }
        let n = (0..d).map(|j| m[k * d + j].powi(2)).sum::<f64>().sqrt();
        for j in 0..d {
            m[k * d + j] /= n;
        }
    }
    m.into_iter().map(T::lit).collect()
}

fn cholesky<T: Real>(g: &[T], d: usize) -> Vec<T> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = g[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = if i == j { s.sqrt() } else { s / l[j * d + j] };
        }
    }
    l
}

/// Smooth function on frame coordinates: a sum of `c · Π x_v^p · cos(Σ a_v x_v + φ)`.
///
/// Variables are numbered `z_0..z_{d-1}` first, then `ζ^k_j` at `d + k d + j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TestFunction<T> {
    pub terms: Vec<Term<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term<T> {
    pub coef: T,
    pub powers: Vec<(usize, u32)>,
    pub wave: Option<(Vec<(usize, T)>, T)>,
}

impl<T: Real> TestFunction<T> {
    pub fn constant(c: T) -> Self {
        Self { terms: vec![Term { coef: c, powers: vec![], wave: None }] }
    }

    pub fn variable(v: usize) -> Self {
        Self { terms: vec![Term { coef: T::one(), powers: vec![(v, 1)], wave: None }] }
    }

    pub fn eval<A: Analytic<T>>(&self, x: &[A]) -> A {
        let mut acc = x[0].lift(T::zero());
        for t in &self.terms {
            let mut v = x[0].lift(t.coef);
            for &(i, p) in &t.powers {
                v = v * x[i].powi(p);
            }
            if let Some((lin, phase)) = &t.wave {
                let mut arg = x[0].lift(*phase);
                for &(i, a) in lin {
                    arg = arg + x[i].scale(a);
                }
                v = v * arg.cos();
            }
            acc = acc + v;
        }
        acc
    }

    /// Random combination of low-degree monomials and plane waves in `nvars` variables.
    pub fn random(nvars: usize, terms: usize, rng: &mut impl Rng) -> Self {
        let mut out = Vec::with_capacity(terms);
        for _ in 0..terms {
            let coef = T::lit(rng.random_range(-1.0..1.0));
            let np = rng.random_range(0..3usize);
            let powers = (0..np).map(|_| (rng.random_range(0..nvars), rng.random_range(1..3u32))).collect();
            let wave = if rng.random_bool(0.7) {
                let nl = rng.random_range(1..4usize);
                let lin = (0..nl)
                    .map(|_| (rng.random_range(0..nvars), T::lit(rng.random_range(-2.0..2.0))))
                    .collect();
                Some((lin, T::lit(rng.random_range(0.0..std::f64::consts::TAU))))
            } else {
                None
            };
            out.push(Term { coef, powers, wave });
        }
        Self { terms: out }
    }

    fn from_poly(p: &Poly, vars: &[usize]) -> Self {
        let terms = p
            .0
            .iter()
            .filter(|(_, &c)| c != 0.0)
            .map(|(e, &c)| Term {
                coef: T::lit(c),
                powers: e.iter().enumerate().filter(|(_, &k)| k > 0).map(|(i, &k)| (vars[i], k as u32)).collect(),
                wave: None,
            })
            .collect();
        Self { terms }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldOp<T> {
    /// `V_{kℓ}`, 1-based indices.
    V(usize, usize),
    /// `H̃_m`, 1-based.
    Htilde(usize),
    /// Tangential projection of `∂_{y_j}` onto the fiber sphere `|ζ¹| = 1`, 1-based.
    NashX(usize),
    /// `Σ c · (A₁ ∘ A₂ ∘ …)`.
    Composite(Vec<(T, Vec<FieldOp<T>>)>),
}

impl<T: Real> FieldOp<T> {
    /// Number of derivatives the operator takes.
    pub fn order(&self) -> usize {
        match self {
            FieldOp::Composite(terms) => {
                terms.iter().map(|(_, w)| w.iter().map(FieldOp::order).sum::<usize>()).max().unwrap_or(0)
            }
            _ => 1,
        }
    }

    /// `Δ_O^V = -Σ_{i<j} V_{ij}²`.
    pub fn vertical_laplacian(d: usize) -> Self {
        let mut terms = Vec::new();
        for i in 1..=d {
            for j in i + 1..=d {
                terms.push((-T::one(), vec![FieldOp::V(i, j), FieldOp::V(i, j)]));
            }
        }
        FieldOp::Composite(terms)
    }

    /// `Δ_O^H = -Σ_m H̃_m²`.
    pub fn horizontal_laplacian(d: usize) -> Self {
        FieldOp::Composite((1..=d).map(|m| (-T::one(), vec![FieldOp::Htilde(m), FieldOp::Htilde(m)])).collect())
    }

    pub fn scaled(self, c: T) -> Self {
        FieldOp::Composite(vec![(c, vec![self])])
    }

    pub fn sum(ops: Vec<FieldOp<T>>) -> Self {
        FieldOp::Composite(ops.into_iter().map(|o| (T::one(), vec![o])).collect())
    }
}

pub fn vertical_field<T: Real>(k: usize, l: usize, d: usize) -> Result<FieldOp<T>> {
    for i in [k, l] {
        if i == 0 || i > d {
            return Err(Error::IndexOutOfRange { index: i, max: d });
        }
    }
    Ok(FieldOp::V(k, l))
}

pub fn horizontal_field<T: Real>(base: &FrameBase<T>, m: usize) -> Result<FieldOp<T>> {
    let d = base.dim();
    if m == 0 || m > d {
        return Err(Error::IndexOutOfRange { index: m, max: d });
    }
    Ok(FieldOp::Htilde(m))
}

/// Jets of the coordinates at a frame point, together with the coefficient jets of every `H̃_m`.
pub struct Evaluator<'a, T: Real> {
    base: &'a FrameBase<T>,
    d: usize,
    coords: Vec<Jet<T>>,
    htilde: Vec<Vec<(usize, Jet<T>)>>,
}

impl<'a, T: Real> Evaluator<'a, T> {
    pub fn new(base: &'a FrameBase<T>, p: &FramePoint<T>, space: &Arc<JetSpace>) -> Result<Self> {
        let d = base.dim();
        if p.dim() != d || p.zeta.len() != d * d {
            return Err(Error::LengthMismatch { expected: d, got: p.dim() });
        }
        if space.nvars() != d + d * d {
            return Err(Error::LengthMismatch { expected: d + d * d, got: space.nvars() });
        }
        base.check(&p.z)?;
        let coords: Vec<Jet<T>> =
            p.z.iter().chain(&p.zeta).enumerate().map(|(i, &x)| Jet::var(space, i, x)).collect();
        let z = &coords[..d];
        let gi = base.inverse_metric(z);
        let gamma = base.christoffel(z);
        let zeta = |k: usize, j: usize| &coords[d + k * d + j];
        let mut htilde = Vec::with_capacity(d);
        for m in 0..d {
            let v: Vec<Jet<T>> = (0..d)
                .map(|i| {
                    let mut s = Jet::constant(space, T::zero());
                    for j in 0..d {
                        s = &s + &(&gi[i * d + j] * zeta(m, j));
                    }
                    s
                })
                .collect();
            let mut list: Vec<(usize, Jet<T>)> = v.iter().cloned().enumerate().collect();
            // ζ̇^k_ℓ = Γ^a_{ℓi} ζ^k_a v^i
            let flat = base.is_flat();
            if !flat {
                for k in 0..d {
                    for l in 0..d {
                        let mut s = Jet::constant(space, T::zero());
                        for a in 0..d {
                            for (i, vi) in v.iter().enumerate() {
                                let g = &gamma[a * d * d + l * d + i];
                                s = &s + &(&(g * zeta(k, a)) * vi);
                            }
                        }
                        list.push((d + k * d + l, s));
                    }
                }
            }
            htilde.push(list);
        }
        Ok(Self { base, d, coords, htilde })
    }

    pub fn coords(&self) -> &[Jet<T>] {
        &self.coords
    }

    pub fn function(&self, f: &TestFunction<T>) -> Jet<T> {
        f.eval(&self.coords)
    }

    fn zeta_var(&self, k: usize, j: usize) -> usize {
        self.d + k * self.d + j
    }

    pub fn apply(&self, op: &FieldOp<T>, f: &Jet<T>) -> Jet<T> {
        let d = self.d;
        let zero = || Jet::constant(f.space(), T::zero());
        match op {
            FieldOp::V(k, l) => {
                let (k, l) = (k - 1, l - 1);
                let mut acc = zero();
                if k == l {
                    return f.derivative(0).scale(T::zero());
                }
                for j in 0..d {
                    let a = &self.coords[self.zeta_var(k, j)] * &f.derivative(self.zeta_var(l, j));
                    let b = &self.coords[self.zeta_var(l, j)] * &f.derivative(self.zeta_var(k, j));
                    acc = &acc + &(&a - &b);
                }
                acc
            }
            FieldOp::Htilde(m) => {
                let mut acc = zero();
                for (var, c) in &self.htilde[m - 1] {
                    acc = &acc + &(c * &f.derivative(*var));
                }
                acc
            }
            FieldOp::NashX(j) => {
                let j = j - 1;
                let mut radial = zero();
                for a in 0..d {
                    let v = self.zeta_var(0, a);
                    radial = &radial + &(&self.coords[v] * &f.derivative(v));
                }
                &f.derivative(self.zeta_var(0, j)) - &(&self.coords[self.zeta_var(0, j)] * &radial)
            }
            FieldOp::Composite(terms) => {
                let mut acc: Option<Jet<T>> = None;
                for (c, word) in terms {
                    let mut g = f.clone();
                    for w in word.iter().rev() {
                        g = self.apply(w, &g);
                    }
                    let g = g.scale(*c);
                    acc = Some(match acc {
                        None => g,
                        Some(a) => &a + &g,
                    });
                }
                acc.unwrap_or_else(|| f.scale(T::zero()))
            }
        }
    }

    pub fn bracket(&self, x: &FieldOp<T>, y: &FieldOp<T>, f: &Jet<T>) -> Jet<T> {
        &self.apply(x, &self.apply(y, f)) - &self.apply(y, &self.apply(x, f))
    }

    pub fn base(&self) -> &FrameBase<T> {
        self.base
    }
}

/// `(XY − YX) f (p)`.
pub fn lie_bracket<T: Real>(
    base: &FrameBase<T>,
    x: &FieldOp<T>,
    y: &FieldOp<T>,
    f: &TestFunction<T>,
    p: &FramePoint<T>,
) -> Result<T> {
    let d = base.dim();
    let space = JetSpace::new(d + d * d, x.order() + y.order());
    let ev = Evaluator::new(base, p, &space)?;
    Ok(ev.bracket(x, y, &ev.function(f)).value())
}

/// `X f (p)`.
pub fn apply_field<T: Real>(base: &FrameBase<T>, x: &FieldOp<T>, f: &TestFunction<T>, p: &FramePoint<T>) -> Result<T> {
    let d = base.dim();
    let space = JetSpace::new(d + d * d, x.order());
    let ev = Evaluator::new(base, p, &space)?;
    Ok(ev.apply(x, &ev.function(f)).value())
}

/// Central difference of `t ↦ f(z, ζ ∘ e^{t A_{kℓ}})` at `t = 0`.
pub fn vertical_flow_derivative<T: Real>(f: &TestFunction<T>, p: &FramePoint<T>, k: usize, l: usize, h: T) -> T {
    let eval = |t: T| {
        let q = rotate_frame(p, k - 1, l - 1, t);
        let x: Vec<T> = q.z.iter().chain(&q.zeta).copied().collect();
        f.eval(&x)
    };
    (eval(h) - eval(-h)) / (T::lit(2.0) * h)
}

// Row i of ζ∘e^{tA} is Σ_a (e^{tA})_{ai} ζ^a with A = E_{kℓ} − E_{ℓk}.
fn rotate_frame<T: Real>(p: &FramePoint<T>, k: usize, l: usize, t: T) -> FramePoint<T> {
    let d = p.dim();
    let (s, c) = t.sin_cos();
    let mut q = p.clone();
    for j in 0..d {
        let zk = p.zeta[k * d + j];
        let zl = p.zeta[l * d + j];
        q.zeta[k * d + j] = c * zk - s * zl;
        q.zeta[l * d + j] = s * zk + c * zl;
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub trial: usize,
    pub point: Vec<f64>,
    pub instance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityResidual {
    pub identity: String,
    pub trials: usize,
    pub instances: usize,
    pub max_residual: f64,
    pub witness: Option<Witness>,
    pub passed: bool,
}

impl IdentityResidual {
    fn new(identity: &str, trials: usize) -> Self {
        Self { identity: identity.into(), trials, instances: 0, max_residual: 0.0, witness: None, passed: true }
    }

    fn record(&mut self, r: f64, trial: usize, p: &[f64], instance: impl FnOnce() -> String) {
        self.instances += 1;
        if r > self.max_residual || (r.is_nan() && !self.max_residual.is_nan()) {
            self.max_residual = r;
            self.witness = Some(Witness { trial, point: p.to_vec(), instance: instance() });
        }
    }

    fn finish(mut self, tol: f64) -> Self {
        self.passed = self.max_residual <= tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommutationReport {
    pub dimension: usize,
    pub base: String,
    pub identities: Vec<IdentityResidual>,
}

impl CommutationReport {
    pub fn max_residual(&self) -> f64 {
        self.identities.iter().map(|i| i.max_residual).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.identities.iter().all(|i| i.passed)
    }

    pub fn failures(&self) -> Vec<&IdentityResidual> {
        self.identities.iter().filter(|i| !i.passed).collect()
    }
}

fn kron(a: usize, b: usize) -> bool {
    a == b
}

/// Right-hand side of `[V_{kℓ}, V_{mn}]` as a combination of vertical fields.
pub fn vertical_bracket_rhs<T: Real>(k: usize, l: usize, m: usize, n: usize) -> FieldOp<T> {
    let mut terms = Vec::new();
    if kron(l, m) {
        terms.push((T::one(), vec![FieldOp::V(k, n)]));
    }
    if kron(n, k) {
        terms.push((T::one(), vec![FieldOp::V(l, m)]));
    }
    if kron(k, m) {
        terms.push((T::one(), vec![FieldOp::V(n, l)]));
    }
    if kron(l, n) {
        terms.push((T::one(), vec![FieldOp::V(m, k)]));
    }
    FieldOp::Composite(terms)
}

/// Right-hand side of `[V_{kℓ}, H̃_m]`.
pub fn mixed_bracket_rhs<T: Real>(k: usize, l: usize, m: usize) -> FieldOp<T> {
    let mut terms = Vec::new();
    if l == m {
        terms.push((T::one(), vec![FieldOp::Htilde(k)]));
    }
    if k == m {
        terms.push((-T::one(), vec![FieldOp::Htilde(l)]));
    }
    FieldOp::Composite(terms)
}

/// Options for [`verify_commutation_suite`].
#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub trials: usize,
    pub seed: u64,
    pub terms: usize,
    pub tolerance: f64,
    /// Replaces the random test functions by a constant.
    pub constant_function: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { trials: 50, seed: DEFAULT_SEED, terms: 4, tolerance: IDENTITY_TOLERANCE, constant_function: false }
    }
}

/// Evaluates the vertical and mixed commutation relations and the Laplacian commutators
/// on random test functions at random frame points.
pub fn verify_commutation_suite<T: Real>(base: &FrameBase<T>, opts: &SuiteOptions) -> Result<CommutationReport> {
    if opts.trials == 0 {
        return Err(Error::Invalid("trials must be at least 1".into()));
    }
    let d = base.dim();
    let nv = d + d * d;
    let flat = base.is_flat();
    let order = if flat { 4 } else { 3 };
    let space = JetSpace::new(nv, order);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut r_vv = IdentityResidual::new("[V_kl,V_mn] = d_lm V_kn + d_nk V_lm + d_km V_nl + d_ln V_mk", opts.trials);
    let mut r_vh = IdentityResidual::new("[V_kl,H_m] = d_lm H_k - d_km H_l", opts.trials);
    let mut r_lv = IdentityResidual::new("[Lap_V,V_mn] = 0", opts.trials);
    let mut r_hv = IdentityResidual::new("[Lap_H,Lap_V] = 0", opts.trials);
    let lap_v = FieldOp::vertical_laplacian(d);
    let lap_h = FieldOp::horizontal_laplacian(d);

    for trial in 0..opts.trials {
        let p = FramePoint::random(base, &mut rng);
        let f = if opts.constant_function {
            TestFunction::constant(T::lit(rng.random_range(-1.0..1.0)))
        } else {
            TestFunction::random(nv, opts.terms, &mut rng)
        };
        let ev = Evaluator::new(base, &p, &space)?;
        let fj = ev.function(&f);
        let pt: Vec<f64> = p.z.iter().chain(&p.zeta).map(|x| x.as_f64()).collect();

        for k in 1..=d {
            for l in 1..=d {
                if k == l {
                    continue;
                }
                for m in 1..=d {
                    for n in 1..=d {
                        if m == n {
                            continue;
                        }
                        let lhs = ev.bracket(&FieldOp::V(k, l), &FieldOp::V(m, n), &fj).value();
                        let rhs = ev.apply(&vertical_bracket_rhs(k, l, m, n), &fj).value();
                        r_vv.record((lhs - rhs).abs().as_f64(), trial, &pt, || format!("k={k} l={l} m={m} n={n}"));
                    }
                }
                for m in 1..=d {
                    let lhs = ev.bracket(&FieldOp::V(k, l), &FieldOp::Htilde(m), &fj).value();
                    let rhs = ev.apply(&mixed_bracket_rhs(k, l, m), &fj).value();
                    r_vh.record((lhs - rhs).abs().as_f64(), trial, &pt, || format!("k={k} l={l} m={m}"));
                }
            }
        }
        for m in 1..=d {
            for n in m + 1..=d {
                let r = ev.bracket(&lap_v, &FieldOp::V(m, n), &fj).value().abs().as_f64();
                r_lv.record(r, trial, &pt, || format!("m={m} n={n}"));
            }
        }
        if flat {
            let r = ev.bracket(&lap_h, &lap_v, &fj).value().abs().as_f64();
            r_hv.record(r, trial, &pt, String::new);
        }
    }
    let mut identities = vec![r_vv.finish(opts.tolerance), r_vh.finish(opts.tolerance), r_lv.finish(opts.tolerance)];
    if flat {
        identities.push(r_hv.finish(opts.tolerance));
    }
    Ok(CommutationReport { dimension: d, base: describe(base), identities })
}

fn describe<T: Real>(base: &FrameBase<T>) -> String {
    match base {
        FrameBase::Surface(m) => format!("{:?}", m.name()),
        FrameBase::Euclidean(d) => format!("Euclidean{d}"),
    }
}

/// Polynomial in a fixed number of variables, keyed by exponent vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly(pub BTreeMap<Vec<u8>, f64>);

impl Poly {
    pub fn monomial(c: f64, e: &[u8]) -> Self {
        let mut m = BTreeMap::new();
        m.insert(e.to_vec(), c);
        Poly(m)
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut m = self.0.clone();
        for (e, c) in &o.0 {
            *m.entry(e.clone()).or_insert(0.0) += c;
        }
        m.retain(|_, c| *c != 0.0);
        Poly(m)
    }

    pub fn scale(&self, a: f64) -> Poly {
        Poly(self.0.iter().map(|(e, c)| (e.clone(), c * a)).collect())
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut m: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (ea, ca) in &self.0 {
            for (eb, cb) in &o.0 {
                let e: Vec<u8> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *m.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        m.retain(|_, c| *c != 0.0);
        Poly(m)
    }

    pub fn pow(&self, n: u32, nvars: usize) -> Poly {
        let mut acc = Poly::monomial(1.0, &vec![0; nvars]);
        for _ in 0..n {
            acc = acc.mul(self);
        }
        acc
    }

    /// Euclidean Laplacian.
    pub fn laplacian(&self) -> Poly {
        let mut m: BTreeMap<Vec<u8>, f64> = BTreeMap::new();
        for (e, c) in &self.0 {
            for i in 0..e.len() {
                if e[i] >= 2 {
                    let mut f = e.clone();
                    f[i] -= 2;
                    *m.entry(f).or_insert(0.0) += c * (e[i] as f64) * (e[i] as f64 - 1.0);
                }
            }
        }
        m.retain(|_, c| *c != 0.0);
        Poly(m)
    }

    pub fn degree(&self) -> u32 {
        self.0.keys().map(|e| e.iter().map(|&x| x as u32).sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.0.iter().map(|(e, c)| c * e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product::<f64>()).sum()
    }
}

/// A homogeneous harmonic polynomial on `ℝ^d` (so its restriction is a spherical harmonic).
#[derive(Debug, Clone, PartialEq)]
pub struct Harmonic {
    pub d: usize,
    pub degree: u32,
    pub name: String,
    pub poly: Poly,
}

impl Harmonic {
    /// Eigenvalue `ℓ(ℓ + d − 2)` of the nonnegative sphere Laplacian.
    pub fn eigenvalue(&self) -> f64 {
        let l = self.degree as f64;
        l * (l + self.d as f64 - 2.0)
    }
}

/// Real solid harmonics of degree `≤ max_degree` on `ℝ²` or `ℝ³`.
pub fn harmonic_basis(d: usize, max_degree: u32) -> Result<Vec<Harmonic>> {
    let var = |i: usize| {
        let mut e = vec![0u8; d];
        e[i] = 1;
        Poly::monomial(1.0, &e)
    };
    let one = Poly::monomial(1.0, &vec![0; d]);
    // Re and Im of (x + i y)^m.
    let planar = |m: u32| {
        let (x, y) = (var(0), var(1));
        let mut re = one.clone();
        let mut im = Poly::default();
        for _ in 0..m {
            let nre = re.mul(&x).add(&im.mul(&y).scale(-1.0));
            let nim = re.mul(&y).add(&im.mul(&x));
            re = nre;
            im = nim;
        }
        (re, im)
    };
    let mut out = Vec::new();
    match d {
        2 => {
            for l in 0..=max_degree {
                let (re, im) = planar(l);
                out.push(Harmonic { d, degree: l, name: format!("re(x+iy)^{l}"), poly: re });
                if l > 0 {
                    out.push(Harmonic { d, degree: l, name: format!("im(x+iy)^{l}"), poly: im });
                }
            }
        }
        3 => {
            let z = var(2);
            let r2 = var(0).mul(&var(0)).add(&var(1).mul(&var(1))).add(&z.mul(&z));
            let z2 = z.mul(&z);
            // Zonal factors Q_l^m(z, r²) so that Q_l^m · (x+iy)^m is harmonic.
            let zonal = |l: u32, m: u32| -> Poly {
                match (l, m) {
                    (_, m) if m == l => one.clone(),
                    (l, m) if m + 1 == l => z.clone(),
                    (2, 0) => z2.scale(3.0).add(&r2.scale(-1.0)),
                    (3, 0) => z.mul(&z2.scale(5.0).add(&r2.scale(-3.0))),
                    (3, 1) => z2.scale(5.0).add(&r2.scale(-1.0)),
                    (4, 0) => z2.mul(&z2).scale(35.0).add(&z2.mul(&r2).scale(-30.0)).add(&r2.mul(&r2).scale(3.0)),
                    (4, 1) => z.mul(&z2.scale(7.0).add(&r2.scale(-3.0))),
                    (4, 2) => z2.scale(7.0).add(&r2.scale(-1.0)),
                    _ => unreachable!(),
                }
            };
            if max_degree > 4 {
                return Err(Error::Unsupported("harmonics above degree 4".into()));
            }
            for l in 0..=max_degree {
                for m in 0..=l {
                    let (re, im) = planar(m);
                    let q = zonal(l, m);
                    out.push(Harmonic { d, degree: l, name: format!("Y[{l},{m}]c"), poly: q.mul(&re) });
                    if m > 0 {
                        out.push(Harmonic { d, degree: l, name: format!("Y[{l},{m}]s"), poly: q.mul(&im) });
                    }
                }
            }
        }
        _ => return Err(Error::Unsupported(format!("harmonic basis for d = {d}"))),
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicResidual {
    pub harmonic: String,
    pub degree: u32,
    pub expected_eigenvalue: f64,
    /// Least-squares eigenvalue recovered from the lifted operator.
    pub measured_eigenvalue: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntertwiningReport {
    pub dimension: usize,
    pub points: usize,
    pub harmonics: Vec<HarmonicResidual>,
    pub max_residual: f64,
    pub passed: bool,
}

/// Checks `Δ_{O(d)} π*u = π* Δ_{S^{d−1}} u` with `π(ζ) = ζ¹` on spherical harmonics of degree `≤ 4`.
pub fn verify_intertwining(d: usize) -> Result<IntertwiningReport> {
    verify_intertwining_with(d, 20, DEFAULT_SEED, IDENTITY_TOLERANCE)
}

pub fn verify_intertwining_with(d: usize, points: usize, seed: u64, tol: f64) -> Result<IntertwiningReport> {
    if !(2..=3).contains(&d) {
        return Err(Error::Unsupported(format!("intertwining check in dimension {d}")));
    }
    let base = FrameBase::<f64>::Euclidean(d);
    let space = JetSpace::new(d + d * d, 2);
    let lap = FieldOp::vertical_laplacian(d);
    let fiber_vars: Vec<usize> = (0..d).map(|j| d + j).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<FramePoint<f64>> = (0..points).map(|_| FramePoint::random(&base, &mut rng)).collect();
    let mut harmonics = Vec::new();
    for h in harmonic_basis(d, 4)? {
        let f = TestFunction::from_poly(&h.poly, &fiber_vars);
        let mut worst = 0.0f64;
        let (mut num, mut den) = (0.0, 0.0);
        for p in &frames {
            let ev = Evaluator::new(&base, p, &space)?;
            let fj = ev.function(&f);
            let lhs = ev.apply(&lap, &fj).value();
            let u = fj.value();
            worst = worst.max((lhs - h.eigenvalue() * u).abs());
            num += lhs * u;
            den += u * u;
        }
        let measured = if den > 0.0 { num / den } else { 0.0 };
        harmonics.push(HarmonicResidual {
            harmonic: h.name.clone(),
            degree: h.degree,
            expected_eigenvalue: h.eigenvalue(),
            measured_eigenvalue: measured,
            max_residual: worst,
        });
    }
    let max_residual = harmonics.iter().map(|h| h.max_residual).fold(0.0, f64::max);
    Ok(IntertwiningReport { dimension: d, points, harmonics, max_residual, passed: max_residual <= tol })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NashReport {
    pub sphere_dimension: usize,
    pub fields: usize,
    /// `max |Δ_S f + Σ X_j² f|` over the harmonic basis and sample points.
    pub sum_of_squares_residual: f64,
    /// `max |div X_j|` on the sphere, per field.
    pub divergence: Vec<f64>,
    /// `max |Σ_j (div X_j) X_j f|`, the first-order remainder of `Σ X_j* X_j`.
    pub divergence_drift: f64,
    pub sum_of_squares_passed: bool,
    pub divergence_passed: bool,
}

pub const NASH_TOLERANCE: f64 = 1e-8;

/// Tangential projections `X_j` of the ambient coordinate fields onto the unit fiber sphere.
///
/// The flat torus carries circle fibers in `ℝ²`; the round sphere is handled through its
/// embedding `S² ⊂ ℝ³`, which is also the fiber of a three-dimensional flat base.
pub fn nash_fields<T: Real>(model: &ManifoldModel<T>) -> Result<(Vec<FieldOp<T>>, NashReport)> {
    let d = match model {
        ManifoldModel::FlatTorus2 => 2,
        ManifoldModel::Sphere2 => 3,
        ManifoldModel::RevolutionSurface(_) => {
            return Err(Error::Unsupported("surface of revolution has no built-in isometric embedding".into()))
        }
    };
    let fields: Vec<FieldOp<T>> = (1..=d).map(FieldOp::NashX).collect();
    let report = nash_report(d, 20, DEFAULT_SEED)?;
    Ok((fields, report))
}

pub fn nash_report(d: usize, points: usize, seed: u64) -> Result<NashReport> {
    let base = FrameBase::<f64>::Euclidean(d);
    let space = JetSpace::new(d + d * d, 2);
    let fiber_vars: Vec<usize> = (0..d).map(|j| d + j).collect();
    let squares = FieldOp::Composite((1..=d).map(|j| (1.0, vec![FieldOp::NashX(j), FieldOp::NashX(j)])).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<FramePoint<f64>> = (0..points).map(|_| FramePoint::random(&base, &mut rng)).collect();
    let mut sos = 0.0f64;
    let mut drift = 0.0f64;
    for h in harmonic_basis(d, 4)? {
        let f = TestFunction::from_poly(&h.poly, &fiber_vars);
        for p in &frames {
            let ev = Evaluator::new(&base, p, &space)?;
            let fj = ev.function(&f);
            let s = ev.apply(&squares, &fj).value();
            sos = sos.max((h.eigenvalue() * fj.value() + s).abs());
            let mut weighted = 0.0;
            for j in 1..=d {
                let div = sphere_divergence(d, j, p.row(0));
                weighted += div * ev.apply(&FieldOp::NashX(j), &fj).value();
            }
            drift = drift.max(weighted.abs());
        }
    }
    let mut divergence = vec![0.0f64; d];
    for p in &frames {
        for (j, dv) in divergence.iter_mut().enumerate() {
            *dv = dv.max(sphere_divergence(d, j + 1, p.row(0)).abs());
        }
    }
    Ok(NashReport {
        sphere_dimension: d - 1,
        fields: d,
        sum_of_squares_residual: sos,
        divergence: divergence.clone(),
        divergence_drift: drift,
        sum_of_squares_passed: sos <= NASH_TOLERANCE,
        divergence_passed: divergence.iter().all(|&v| v <= NASH_TOLERANCE),
    })
}

/// Riemannian divergence of `X_j` at the sphere point `y`, computed in an angular chart
/// from first-order jets of the chart components and the volume density.
pub fn sphere_divergence(d: usize, j: usize, y: &[f64]) -> f64 {
    match d {
        2 => {
            let theta = y[1].atan2(y[0]);
            let s = JetSpace::new(1, 1);
            let t = Jet::var(&s, 0, theta);
            // X_j = a_j(θ) ∂_θ with a_j = e_j · (−sin θ, cos θ).
            let a = if j == 1 { -Analytic::sin(&t) } else { Analytic::cos(&t) };
            a.derivative(0).value()
        }
        3 => {
            let phi = y[2].clamp(-1.0, 1.0).acos();
            let lam = y[1].atan2(y[0]);
            let s = JetSpace::new(2, 1);
            let p = Jet::var(&s, 0, phi);
            let l = Jet::var(&s, 1, lam);
            let (sp, cp) = (Analytic::sin(&p), Analytic::cos(&p));
            let (sl, cl) = (Analytic::sin(&l), Analytic::cos(&l));
            let dphi = [&cp * &cl, &cp * &sl, -sp.clone()];
            let dlam = [-(&sp * &sl), &sp * &cl, Jet::constant(&s, 0.0)];
            // Components a^φ = e_j·∂_φ y and a^λ = e_j·∂_λ y / sin²φ; density sin φ.
            let a_phi = dphi[j - 1].clone();
            let a_lam = &dlam[j - 1] * &Analytic::recip(&(&sp * &sp));
            let flux_phi = &sp * &a_phi;
            (flux_phi.derivative(0).value() / sp.value()) + a_lam.derivative(1).value()
        }
        _ => f64::NAN,
    }
}

/// Integrates the flow of `H̃_m` on a surface frame bundle.
pub fn integrate_horizontal<T: Real>(
    model: &ManifoldModel<T>,
    p: &FramePoint<T>,
    m: usize,
    t: T,
    renormalize: bool,
) -> Result<FramePoint<T>> {
    if m == 0 || m > 2 {
        return Err(Error::IndexOutOfRange { index: m, max: 2 });
    }
    let m = m - 1;
    let rhs = |y: &[T; 6]| {
        let z = [y[0], y[1]];
        let gi = model.metric_inverse_generic(&z);
        let g = model.christoffel_generic(&z);
        let zeta = |k: usize, j: usize| y[2 + 2 * k + j];
        let v = [gi[0] * zeta(m, 0) + gi[1] * zeta(m, 1), gi[2] * zeta(m, 0) + gi[3] * zeta(m, 1)];
        let mut out = [T::zero(); 6];
        out[0] = v[0];
        out[1] = v[1];
        for k in 0..2 {
            for l in 0..2 {
                let mut s = T::zero();
                for a in 0..2 {
                    for (i, vi) in v.iter().enumerate() {
                        s += g[a * 4 + l * 2 + i] * zeta(k, a) * *vi;
                    }
                }
                out[2 + 2 * k + l] = s;
            }
        }
        out
    };
    let y0 = [p.z[0], p.z[1], p.zeta[0], p.zeta[1], p.zeta[2], p.zeta[3]];
    let atol = T::lit(DEFAULT_ATOL).max(T::epsilon() * T::lit(1e3));
    let (y, _, _) = dormand_prince(rhs, y0, t, atol)?;
    model.check_domain(&[y[0], y[1]])?;
    let mut q = FramePoint { z: vec![y[0], y[1]], zeta: y[2..].to_vec(), chart: p.chart };
    if renormalize {
        q.reorthonormalize(&FrameBase::Surface(model.clone()));
    }
    Ok(q)
}
