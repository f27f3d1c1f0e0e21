//! Concrete Riemannian surfaces: the flat torus, the round sphere and surfaces of revolution.
//!
//! Every model is described in a chart with coordinates `z = (z_0, z_1)`. Covectors are
//! stored by their chart components, so `|ζ|_g² = g^{ij} ζ_i ζ_j`.

use crate::error::{Error, Result};
use crate::jet::Analytic;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelName {
    FlatTorus2,
    Sphere2,
    RevolutionSurface,
}

/// Radius profile `r(u)` of a surface of revolution with metric `du² + r(u)² dv²`.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile<T> {
    /// `r(u) = Σ c_j u^j`, valid for `u` in `domain`.
    Polynomial { coeffs: Vec<T>, domain: (T, T) },
    /// `r(u) = Σ a_j cos(j u)`, periodic in `u`.
    Cosine(Vec<T>),
}

impl<T: Real> Profile<T> {
    pub fn r<A: Analytic<T>>(&self, u: &A) -> A {
        match self {
            Profile::Polynomial { coeffs, .. } => horner(coeffs, u),
            Profile::Cosine(a) => cosine_series(a, u, 0),
        }
    }

    pub fn dr<A: Analytic<T>>(&self, u: &A) -> A {
        match self {
            Profile::Polynomial { coeffs, .. } => horner(&poly_derivative(coeffs), u),
            Profile::Cosine(a) => cosine_series(a, u, 1),
        }
    }

    pub fn ddr<A: Analytic<T>>(&self, u: &A) -> A {
        match self {
            Profile::Polynomial { coeffs, .. } => {
                horner(&poly_derivative(&poly_derivative(coeffs)), u)
            }
            Profile::Cosine(a) => cosine_series(a, u, 2),
        }
    }
}

fn poly_derivative<T: Real>(c: &[T]) -> Vec<T> {
    c.iter().enumerate().skip(1).map(|(j, &x)| x * T::lit(j as f64)).collect()
}

fn horner<T: Real, A: Analytic<T>>(c: &[T], u: &A) -> A {
    let mut acc = u.lift(T::zero());
    for &x in c.iter().rev() {
        acc = acc * u.clone() + u.lift(x);
    }
    acc
}

// d-th derivative of Σ a_j cos(j u).
fn cosine_series<T: Real, A: Analytic<T>>(a: &[T], u: &A, d: u32) -> A {
    let mut acc = u.lift(T::zero());
    for (j, &aj) in a.iter().enumerate() {
        if j == 0 {
            if d == 0 {
                acc = acc + u.lift(aj);
            }
            continue;
        }
        let w = T::lit(j as f64);
        let arg = u.scale(w);
        let term = match d % 4 {
            0 => arg.cos(),
            1 => -arg.sin(),
            2 => -arg.cos(),
            _ => arg.sin(),
        };
        acc = acc + term.scale(aj * w.powi(d as i32));
    }
    acc
}

/// Which chart of the atlas a sphere point is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Chart {
    /// Colatitude/longitude about the `e_z` axis.
    #[default]
    Standard,
    /// Colatitude/longitude about the `e_x` axis.
    Rotated,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManifoldModel<T> {
    FlatTorus2,
    Sphere2,
    RevolutionSurface(Profile<T>),
}

/// Point of the unit cosphere bundle: chart position and unit covector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CospherePoint<T> {
    pub z: [T; 2],
    pub zeta1: [T; 2],
    pub chart: Chart,
}

impl<T: Real> CospherePoint<T> {
    pub fn new(z: [T; 2], zeta1: [T; 2]) -> Self {
        Self { z, zeta1, chart: Chart::Standard }
    }
}

/// Christoffel symbols indexed `[m][i][j]` for `Γ^m_{ij}`.
pub type Christoffel<T> = [[[T; 2]; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodesicStats<T> {
    pub steps: usize,
    pub rejected: usize,
    /// `|ζ|_g² - 1` at the end of the integration, before renormalization.
    pub energy_drift: T,
}

const SPHERE_POLE_GUARD: f64 = 1e-8;

impl<T: Real> ManifoldModel<T> {
    pub fn name(&self) -> ModelName {
        match self {
            ManifoldModel::FlatTorus2 => ModelName::FlatTorus2,
            ManifoldModel::Sphere2 => ModelName::Sphere2,
            ManifoldModel::RevolutionSurface(_) => ModelName::RevolutionSurface,
        }
    }

    pub fn dim(&self) -> usize {
        2
    }

    pub fn has_exact_geodesics(&self) -> bool {
        !matches!(self, ManifoldModel::RevolutionSurface(_))
    }

    pub fn check_domain(&self, z: &[T; 2]) -> Result<()> {
        let bad = |chart| Err(Error::Domain { chart, point: z.iter().map(|x| x.as_f64()).collect() });
        if !(z[0].is_finite() && z[1].is_finite()) {
            return bad(self.chart_label());
        }
        match self {
            ManifoldModel::FlatTorus2 => Ok(()),
            ManifoldModel::Sphere2 => {
                if z[0].sin() > T::lit(SPHERE_POLE_GUARD) && z[0] > T::zero() && z[0] < T::PI() {
                    Ok(())
                } else {
                    bad(self.chart_label())
                }
            }
            ManifoldModel::RevolutionSurface(p) => {
                if let Profile::Polynomial { domain, .. } = p {
                    if z[0] < domain.0 || z[0] > domain.1 {
                        return bad(self.chart_label());
                    }
                }
                if p.r(&z[0]) > T::zero() {
                    Ok(())
                } else {
                    bad(self.chart_label())
                }
            }
        }
    }

    fn chart_label(&self) -> &'static str {
        match self {
            ManifoldModel::FlatTorus2 => "torus [0,2π)²",
            ManifoldModel::Sphere2 => "sphere colatitude/longitude",
            ManifoldModel::RevolutionSurface(_) => "revolution (u, v)",
        }
    }

    /// Metric coefficients `g_ij`, row-major, evaluated in any analytic scalar.
    pub fn metric_generic<A: Analytic<T>>(&self, z: &[A]) -> [A; 4] {
        let one = z[0].lift(T::one());
        let zero = z[0].lift(T::zero());
        let g11 = match self {
            ManifoldModel::FlatTorus2 => one.clone(),
            ManifoldModel::Sphere2 => {
                let s = z[0].sin();
                s.clone() * s
            }
            ManifoldModel::RevolutionSurface(p) => {
                let r = p.r(&z[0]);
                r.clone() * r
            }
        };
        [one, zero.clone(), zero, g11]
    }

    /// Inverse metric `g^{ij}`, row-major.
    pub fn metric_inverse_generic<A: Analytic<T>>(&self, z: &[A]) -> [A; 4] {
        let [a, b, c, d] = self.metric_generic(z);
        let inv_det = (a.clone() * d.clone() - b.clone() * c.clone()).recip();
        [d * inv_det.clone(), -b * inv_det.clone(), -c * inv_det.clone(), a * inv_det]
    }

    /// `Γ^m_{ij}` flattened as `m * 4 + i * 2 + j`.
    pub fn christoffel_generic<A: Analytic<T>>(&self, z: &[A]) -> [A; 8] {
        let zero = z[0].lift(T::zero());
        let mut g: [A; 8] = std::array::from_fn(|_| zero.clone());
        match self {
            ManifoldModel::FlatTorus2 => {}
            ManifoldModel::Sphere2 => {
                let (s, c) = (z[0].sin(), z[0].cos());
                g[3] = -(s.clone() * c.clone());
                let cot = c * s.recip();
                g[5] = cot.clone();
                g[6] = cot;
            }
            ManifoldModel::RevolutionSurface(p) => {
                let r = p.r(&z[0]);
                let dr = p.dr(&z[0]);
                g[3] = -(r.clone() * dr.clone());
                let q = dr * r.recip();
                g[5] = q.clone();
                g[6] = q;
            }
        }
        g
    }

    pub fn metric(&self, z: &[T; 2]) -> Result<[[T; 2]; 2]> {
        self.check_domain(z)?;
        let g = self.metric_generic(z);
        Ok([[g[0], g[1]], [g[2], g[3]]])
    }

    pub fn christoffel(&self, z: &[T; 2]) -> Result<Christoffel<T>> {
        self.check_domain(z)?;
        let g = self.christoffel_generic(z);
        Ok(std::array::from_fn(|m| std::array::from_fn(|i| std::array::from_fn(|j| g[m * 4 + i * 2 + j]))))
    }

    /// Gaussian curvature.
    pub fn curvature(&self, z: &[T; 2]) -> Result<T> {
        self.check_domain(z)?;
        Ok(match self {
            ManifoldModel::FlatTorus2 => T::zero(),
            ManifoldModel::Sphere2 => T::one(),
            ManifoldModel::RevolutionSurface(p) => -p.ddr(&z[0]) / p.r(&z[0]),
        })
    }

    pub fn norm(&self, z: &[T; 2], zeta: &[T; 2]) -> Result<T> {
        self.check_domain(z)?;
        let gi = self.metric_inverse_generic(z);
        Ok(quad(&gi, zeta).sqrt())
    }

    pub fn normalize(&self, z: &[T; 2], zeta: &[T; 2]) -> Result<[T; 2]> {
        let n = self.norm(z, zeta)?;
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::Degenerate("covector has zero length".into()));
        }
        Ok([zeta[0] / n, zeta[1] / n])
    }

    pub fn geodesic_flow(&self, p: &CospherePoint<T>, t: T) -> Result<CospherePoint<T>> {
        self.geodesic_flow_with_stats(p, t).map(|(q, _)| q)
    }

    pub fn geodesic_flow_with_stats(
        &self,
        p: &CospherePoint<T>,
        t: T,
    ) -> Result<(CospherePoint<T>, GeodesicStats<T>)> {
        if !t.is_finite() {
            return Err(Error::Invalid("geodesic time must be finite".into()));
        }
        self.check_domain(&p.z)?;
        let exact = GeodesicStats { steps: 0, rejected: 0, energy_drift: T::zero() };
        match self {
            ManifoldModel::FlatTorus2 => {
                let tau = T::lit(2.0) * T::PI();
                let z = [wrap(p.z[0] + t * p.zeta1[0], tau), wrap(p.z[1] + t * p.zeta1[1], tau)];
                Ok((CospherePoint { z, zeta1: p.zeta1, chart: p.chart }, exact))
            }
            ManifoldModel::Sphere2 => {
                let (x, v) = sphere_to_ambient(p);
                let (s, c) = t.sin_cos();
                let x1: [T; 3] = std::array::from_fn(|i| x[i] * c + v[i] * s);
                let v1: [T; 3] = std::array::from_fn(|i| v[i] * c - x[i] * s);
                Ok((sphere_from_ambient(&x1, &v1, p.chart), exact))
            }
            ManifoldModel::RevolutionSurface(profile) => revolution_geodesic(self, profile, p, t),
        }
    }
}

fn quad<T: Real>(gi: &[T; 4], v: &[T; 2]) -> T {
    gi[0] * v[0] * v[0] + (gi[1] + gi[2]) * v[0] * v[1] + gi[3] * v[1] * v[1]
}

fn wrap<T: Real>(x: T, period: T) -> T {
    let y = x - (x / period).floor() * period;
    if y >= period {
        y - period
    } else {
        y
    }
}

/// Embedding of a sphere chart point into ℝ³ with its tangent frame `(∂_φ X, ∂_λ X)`.
pub fn sphere_embedding<T: Real>(chart: Chart, z: &[T; 2]) -> ([T; 3], [T; 3], [T; 3]) {
    let (sp, cp) = z[0].sin_cos();
    let (sl, cl) = z[1].sin_cos();
    let std_x = [sp * cl, sp * sl, cp];
    let std_p = [cp * cl, cp * sl, -sp];
    let std_l = [-sp * sl, sp * cl, T::zero()];
    match chart {
        Chart::Standard => (std_x, std_p, std_l),
        // Cyclic relabelling (a, b, c) -> (c, a, b) puts the polar axis on e_x.
        Chart::Rotated => {
            let rot = |a: [T; 3]| [a[2], a[0], a[1]];
            (rot(std_x), rot(std_p), rot(std_l))
        }
    }
}

fn sphere_to_ambient<T: Real>(p: &CospherePoint<T>) -> ([T; 3], [T; 3]) {
    let (x, dp, dl) = sphere_embedding(p.chart, &p.z);
    let s2 = p.z[0].sin().powi(2);
    let (vp, vl) = (p.zeta1[0], p.zeta1[1] / s2);
    (x, std::array::from_fn(|i| dp[i] * vp + dl[i] * vl))
}

fn sphere_from_ambient<T: Real>(x: &[T; 3], v: &[T; 3], prefer: Chart) -> CospherePoint<T> {
    let colat = |chart: Chart| {
        let axis = match chart {
            Chart::Standard => x[2],
            Chart::Rotated => x[0],
        };
        axis.max(-T::one()).min(T::one()).acos()
    };
    let lo = T::FRAC_PI_4();
    let hi = T::lit(3.0) * T::FRAC_PI_4();
    let inside = |c: T| c >= lo && c <= hi;
    let chart = if inside(colat(prefer)) {
        prefer
    } else {
        match prefer {
            Chart::Standard => Chart::Rotated,
            Chart::Rotated => Chart::Standard,
        }
    };
    let (a, b, c) = match chart {
        Chart::Standard => (x[0], x[1], x[2]),
        Chart::Rotated => (x[1], x[2], x[0]),
    };
    let phi = c.max(-T::one()).min(T::one()).acos();
    let lam = b.atan2(a);
    let z = [phi, lam];
    let (_, dp, dl) = sphere_embedding(chart, &z);
    let dot = |u: &[T; 3], w: &[T; 3]| u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
    CospherePoint { z, zeta1: [dot(v, &dp), dot(v, &dl)], chart }
}

/// Converts a sphere cosphere point to the other chart of the atlas.
pub fn sphere_change_chart<T: Real>(p: &CospherePoint<T>, chart: Chart) -> CospherePoint<T> {
    if p.chart == chart {
        return *p;
    }
    let (x, v) = sphere_to_ambient(p);
    let (a, b, c) = match chart {
        Chart::Standard => (x[0], x[1], x[2]),
        Chart::Rotated => (x[1], x[2], x[0]),
    };
    let z = [c.max(-T::one()).min(T::one()).acos(), b.atan2(a)];
    let (_, dp, dl) = sphere_embedding(chart, &z);
    let dot = |u: &[T; 3], w: &[T; 3]| u[0] * w[0] + u[1] * w[1] + u[2] * w[2];
    CospherePoint { z, zeta1: [dot(&v, &dp), dot(&v, &dl)], chart }
}

/// Position and velocity in ℝ³ of a sphere cosphere point.
pub fn sphere_ambient<T: Real>(p: &CospherePoint<T>) -> ([T; 3], [T; 3]) {
    sphere_to_ambient(p)
}

// Dormand–Prince 5(4) tableau.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

pub(crate) const DEFAULT_ATOL: f64 = 1e-10;
const MAX_STEPS: usize = 2_000_000;

/// Fixed-dimension Dormand–Prince integrator with absolute error control.
pub(crate) fn dormand_prince<T: Real, const D: usize>(
    f: impl Fn(&[T; D]) -> [T; D],
    y0: [T; D],
    t_end: T,
    atol: T,
) -> Result<([T; D], usize, usize)> {
    let mut y = y0;
    let mut t = T::zero();
    let dir = if t_end < T::zero() { -T::one() } else { T::one() };
    let total = t_end.abs();
    let mut h = (total * T::lit(0.01)).min(T::lit(0.05)).max(T::min_positive_value());
    let (mut steps, mut rejected) = (0usize, 0usize);
    let mut k: [[T; D]; 7] = [[T::zero(); D]; 7];
    k[0] = f(&y);
    while t < total {
        if steps + rejected > MAX_STEPS {
            return Err(Error::Integrator {
                t: t.as_f64(),
                step: h.as_f64(),
                steps,
                reason: "step budget exhausted".into(),
            });
        }
        if t + h > total {
            h = total - t;
        }
        for s in 1..7 {
            let mut ys = y;
            for (i, yi) in ys.iter_mut().enumerate() {
                let mut acc = T::zero();
                for j in 0..s {
                    acc += T::lit(DP_A[s][j]) * k[j][i];
                }
                *yi += dir * h * acc;
            }
            k[s] = f(&ys);
        }
        let mut ynew = y;
        let mut err = T::zero();
        for i in 0..D {
            let mut acc = T::zero();
            let mut e = T::zero();
            for s in 0..7 {
                acc += T::lit(DP_B[s]) * k[s][i];
                e += T::lit(DP_E[s]) * k[s][i];
            }
            ynew[i] += dir * h * acc;
            err = err.max((h * e).abs());
        }
        if !err.is_finite() {
            return Err(Error::Integrator {
                t: t.as_f64(),
                step: h.as_f64(),
                steps,
                reason: "non-finite state".into(),
            });
        }
        let ratio = err / atol;
        if ratio <= T::one() {
            t += h;
            y = ynew;
            k[0] = k[6];
            steps += 1;
        } else {
            rejected += 1;
        }
        let fac = if ratio > T::zero() {
            (T::lit(0.9) * ratio.powf(T::lit(-0.2))).min(T::lit(5.0)).max(T::lit(0.2))
        } else {
            T::lit(5.0)
        };
        h = h * fac;
        if h < T::epsilon() * (T::one() + t) {
            return Err(Error::Integrator {
                t: t.as_f64(),
                step: h.as_f64(),
                steps,
                reason: "step size underflow".into(),
            });
        }
    }
    Ok((y, steps, rejected))
}

fn revolution_geodesic<T: Real>(
    model: &ManifoldModel<T>,
    profile: &Profile<T>,
    p: &CospherePoint<T>,
    t: T,
) -> Result<(CospherePoint<T>, GeodesicStats<T>)> {
    let rhs = |y: &[T; 4]| {
        let r = profile.r(&y[0]);
        let dr = profile.dr(&y[0]);
        let r2 = r * r;
        [y[2], y[3] / r2, y[3] * y[3] * dr / (r2 * r), T::zero()]
    };
    let atol = T::lit(DEFAULT_ATOL).max(T::epsilon() * T::lit(1e3));
    let (y, steps, rejected) = dormand_prince(rhs, [p.z[0], p.z[1], p.zeta1[0], p.zeta1[1]], t, atol)?;
    let z = [y[0], y[1]];
    model.check_domain(&z).map_err(|_| Error::Integrator {
        t: t.as_f64(),
        step: 0.0,
        steps,
        reason: "trajectory left the chart domain".into(),
    })?;
    let raw = [y[2], y[3]];
    let n = model.norm(&z, &raw)?;
    let zeta1 = [raw[0] / n, raw[1] / n];
    Ok((
        CospherePoint { z, zeta1, chart: p.chart },
        GeodesicStats { steps, rejected, energy_drift: n * n - T::one() },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus_like() -> ManifoldModel<f64> {
        ManifoldModel::RevolutionSurface(Profile::Cosine(vec![2.0, 1.0]))
    }

    #[test]
    fn flat_torus_is_flat() {
        let m = ManifoldModel::<f64>::FlatTorus2;
        let g = m.christoffel(&[0.3, 5.0]).unwrap();
        assert!(g.iter().flatten().flatten().all(|&x| x == 0.0));
        assert_eq!(m.curvature(&[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn sphere_christoffel_oracle() {
        let m = ManifoldModel::<f64>::Sphere2;
        let g = m.christoffel(&[PI / 2.0, 0.0]).unwrap();
        assert!(g.iter().flatten().flatten().all(|&x| x.abs() < 1e-16));
        let g = m.christoffel(&[PI / 3.0, 0.4]).unwrap();
        assert!((g[0][1][1] + 0.43301270189221932338).abs() < 1e-15);
        assert!((g[1][0][1] - 0.57735026918962576451).abs() < 1e-15);
        assert!((g[1][1][0] - 0.57735026918962576451).abs() < 1e-15);
        assert_eq!(g[0][0][0], 0.0);
        let g = m.christoffel(&[1.0, 2.0]).unwrap();
        assert!((g[0][1][1] + 0.45464871341284084770).abs() < 1e-15);
        assert!((g[1][0][1] - 0.64209261593433070301).abs() < 1e-15);
    }

    #[test]
    fn revolution_christoffel_oracle() {
        let m = torus_like();
        let g = m.christoffel(&[0.0, 1.0]).unwrap();
        assert!(g.iter().flatten().flatten().all(|&x| x.abs() < 1e-15));
        let g = m.christoffel(&[1.0, 0.0]).unwrap();
        assert!((g[0][1][1] - 2.1375906830286338610).abs() < 1e-14);
        assert!((g[1][0][1] + 0.33124836475725145826).abs() < 1e-15);
        let g = m.christoffel(&[2.5, 0.0]).unwrap();
        assert!((g[0][1][1] - 0.71748215087634375366).abs() < 1e-14);
        assert!((g[1][1][0] + 0.49920253323502730480).abs() < 1e-15);
        let poly = ManifoldModel::<f64>::RevolutionSurface(Profile::Polynomial {
            coeffs: vec![1.0, 0.5, 0.25],
            domain: (-1.0, 1.0),
        });
        let g = poly.christoffel(&[0.3, 0.0]).unwrap();
        assert!((g[0][1][1] + 0.762125).abs() < 1e-15);
        assert!((g[1][0][1] - 0.55437100213219616205).abs() < 1e-15);
    }

    #[test]
    fn sphere_pole_is_a_domain_error() {
        let m = ManifoldModel::<f64>::Sphere2;
        assert!(matches!(m.christoffel(&[0.0, 0.0]), Err(Error::Domain { .. })));
        assert!(matches!(m.metric(&[PI, 1.0]), Err(Error::Domain { .. })));
        let poly = ManifoldModel::RevolutionSurface(Profile::Polynomial {
            coeffs: vec![1.0, 1.0],
            domain: (-0.5, 2.0),
        });
        assert!(poly.christoffel(&[3.0, 0.0]).is_err());
    }

    #[test]
    fn flat_geodesic_is_a_straight_line() {
        let m = ManifoldModel::<f64>::FlatTorus2;
        let q = m.geodesic_flow(&CospherePoint::new([0.0, 0.0], [1.0, 0.0]), 0.5).unwrap();
        assert_eq!(q.z, [0.5, 0.0]);
        assert_eq!(q.zeta1, [1.0, 0.0]);
    }

    #[test]
    fn great_circle_closes_after_two_pi() {
        let m = ManifoldModel::<f64>::Sphere2;
        let p = CospherePoint::new([PI / 2.0, 0.3], m.normalize(&[PI / 2.0, 0.3], &[0.6, 0.8]).unwrap());
        let q = m.geodesic_flow(&p, 2.0 * PI).unwrap();
        let q = sphere_change_chart(&q, Chart::Standard);
        assert!((q.z[0] - p.z[0]).abs() < 1e-8);
        assert!((q.z[1] - p.z[1]).abs() < 1e-8);
        assert!((q.zeta1[0] - p.zeta1[0]).abs() < 1e-8);
        assert!((q.zeta1[1] - p.zeta1[1]).abs() < 1e-8);
    }

    #[test]
    fn sphere_flow_hands_off_charts() {
        let m = ManifoldModel::<f64>::Sphere2;
        let p = CospherePoint::new([PI / 2.0, 0.0], [-1.0, 0.0]);
        for step in 1..40 {
            let q = m.geodesic_flow(&p, 0.1 * step as f64).unwrap();
            assert!(q.z[0] >= PI / 4.0 - 1e-12 && q.z[0] <= 3.0 * PI / 4.0 + 1e-12);
            assert!((m.norm(&q.z, &q.zeta1).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn revolution_energy_is_conserved() {
        let m = torus_like();
        let z = [0.4, 0.0];
        let p = CospherePoint::new(z, m.normalize(&z, &[0.3, 1.7]).unwrap());
        let (q, stats) = m.geodesic_flow_with_stats(&p, 10.0).unwrap();
        assert!(stats.energy_drift.abs() < 1e-8, "drift {}", stats.energy_drift);
        assert!((m.norm(&q.z, &q.zeta1).unwrap() - 1.0).abs() < 1e-12);
        // Clairaut: p_v is conserved exactly.
        assert!((q.zeta1[1] * (1.0 + stats.energy_drift).sqrt() - p.zeta1[1]).abs() < 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let m = ManifoldModel::<f64>::FlatTorus2;
        assert_eq!(m.normalize(&[0.0, 0.0], &[2.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert!(matches!(m.normalize(&[0.0, 0.0], &[0.0, 0.0]), Err(Error::Degenerate(_))));
        let s = ManifoldModel::<f64>::Sphere2;
        let z = [PI / 6.0, 0.0];
        // g^{λλ} = 1/sin²(π/6) = 4, so |(0, 1)|_g = 2.
        assert!((s.norm(&z, &[0.0, 1.0]).unwrap() - 2.0).abs() < 1e-14);
        assert!((s.normalize(&z, &[0.0, 1.0]).unwrap()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn single_precision_models_work() {
        let m = ManifoldModel::<f32>::Sphere2;
        let g = m.christoffel(&[1.0, 2.0]).unwrap();
        assert!((g[0][1][1] + 0.454_648_7).abs() < 1e-6);
    }
}
