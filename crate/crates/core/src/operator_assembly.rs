//! Fourier blocks of the kinetic generator on the flat torus cosphere bundle `T² × S¹`.
//!
//! Functions `e^{i k·x} φ_n(θ)` with `φ_n = e^{-inθ}`, `|n| ≤ N`, span one block. In that
//! basis multiplication by `k₁ cos θ + k₂ sin θ` is tridiagonal with `(n, n+1)` entry
//! `(k₁ − i k₂)/2` and `(n+1, n)` entry `(k₁ + i k₂)/2`, and `−iεΔ_S` is `diag(−iεn²)`.

use crate::error::{Error, Result};
use crate::linalg::{norm2, Tridiagonal};
use crate::scalar::Real;
use num_complex::Complex;
use num_traits::Zero;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBlock<T> {
    pub k: (i64, i64),
    pub epsilon: T,
    /// Fiber modes run over `n ∈ [−N, N]`.
    pub n_modes: usize,
    pub matrix: Tridiagonal<T>,
}

/// `max(64, ⌈8/√ε⌉)`; a vanishing `ε` gets the floor.
pub fn default_truncation<T: Real>(epsilon: T) -> usize {
    let e = epsilon.abs().as_f64();
    if e == 0.0 {
        return 64;
    }
    64usize.max((8.0 / e.sqrt()).ceil() as usize)
}

fn mode<T: Real>(i: usize, n_modes: usize) -> T {
    T::lit(i as f64 - n_modes as f64)
}

pub fn assemble_torus_block<T: Real>(k: (i64, i64), epsilon: T, n_modes: usize) -> Result<SpectralBlock<T>> {
    if n_modes == 0 {
        return Err(Error::Invalid("truncation N must be at least 1".into()));
    }
    let dim = 2 * n_modes + 1;
    let (k1, k2) = (T::lit(k.0 as f64), T::lit(k.1 as f64));
    let half = T::lit(0.5);
    let upper = Complex::new(k1 * half, -k2 * half);
    let lower = Complex::new(k1 * half, k2 * half);
    let diag = (0..dim)
        .map(|i| {
            let n: T = mode(i, n_modes);
            Complex::new(T::zero(), -epsilon * n * n)
        })
        .collect();
    let matrix = Tridiagonal { sub: vec![lower; dim - 1], diag, sup: vec![upper; dim - 1] };
    Ok(SpectralBlock { k, epsilon, n_modes, matrix })
}

impl<T: Real> SpectralBlock<T> {
    pub fn dim(&self) -> usize {
        2 * self.n_modes + 1
    }

    pub fn mode(&self, i: usize) -> i64 {
        i as i64 - self.n_modes as i64
    }

    pub fn index(&self, n: i64) -> Option<usize> {
        let i = n + self.n_modes as i64;
        (0..self.dim() as i64).contains(&i).then_some(i as usize)
    }

    pub fn k_norm(&self) -> T {
        T::lit(((self.k.0 * self.k.0 + self.k.1 * self.k.1) as f64).sqrt())
    }

    pub fn apply(&self, v: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if v.len() != self.dim() {
            return Err(Error::LengthMismatch { expected: self.dim(), got: v.len() });
        }
        Ok(self.matrix.matvec(v))
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Complex<T>> {
        self.matrix.to_dense()
    }

    /// `∂_ε` of the block, the diagonal `−i n²`.
    pub fn epsilon_derivative(&self) -> Vec<Complex<T>> {
        (0..self.dim())
            .map(|i| {
                let n: T = mode(i, self.n_modes);
                Complex::new(T::zero(), -n * n)
            })
            .collect()
    }

    /// Real tridiagonal `R` with `B = −i U R U⁻¹`, `U = diag(u^n)`, `u = i e^{iφ}`,
    /// `φ = arg(k₁ + i k₂)`. Returns `(diag R, R_{n,n+1}, R_{n+1,n}, u)`.
    pub fn real_reduction(&self) -> (Vec<T>, T, T, Complex<T>) {
        let kn = self.k_norm();
        let phi = T::lit(self.k.1 as f64).atan2(T::lit(self.k.0 as f64));
        let u = Complex::new(T::zero(), T::one()) * Complex::from_polar(T::one(), phi);
        let diag = (0..self.dim())
            .map(|i| {
                let n: T = mode(i, self.n_modes);
                self.epsilon * n * n
            })
            .collect();
        let half = T::lit(0.5);
        (diag, -kn * half, kn * half, u)
    }

    /// Powers `u^n` for `n ∈ [−N, N]`.
    pub fn reduction_phases(&self) -> Vec<Complex<T>> {
        let (_, _, _, u) = self.real_reduction();
        (0..self.dim()).map(|i| u.powi(self.mode(i) as i32)).collect()
    }

    /// The block written in the orthonormal basis `1, √2 cos nθ, √2 sin nθ` (row-major),
    /// where it is complex symmetric.
    pub fn real_trig_form(&self) -> Vec<Complex<T>> {
        let t = real_trig_transform::<T>(self.n_modes);
        let b = self.to_dense();
        let n = self.dim();
        // Tᴴ B T
        let mut bt = vec![Complex::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = Complex::zero();
                for l in 0..n {
                    s += b[i * n + l] * t[l * n + j];
                }
                bt[i * n + j] = s;
            }
        }
        let mut out = vec![Complex::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                let mut s = Complex::zero();
                for l in 0..n {
                    s += t[l * n + i].conj() * bt[l * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    pub fn to_matrix_market(&self) -> String {
        let n = self.dim();
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate complex general\n");
        let _ = writeln!(s, "% k = {} {}", self.k.0, self.k.1);
        let _ = writeln!(s, "% epsilon = {:.16e}", self.epsilon.as_f64());
        let _ = writeln!(s, "% N = {}", self.n_modes);
        let _ = writeln!(s, "{} {} {}", n, n, 3 * n - 2);
        let d = self.to_dense();
        for i in 0..n {
            for j in i.saturating_sub(1)..(i + 2).min(n) {
                let z = d[i * n + j];
                let _ = writeln!(s, "{} {} {:.16e} {:.16e}", i + 1, j + 1, z.re.as_f64(), z.im.as_f64());
            }
        }
        s
    }

    pub fn from_matrix_market(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("matrix market: {m}"));
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| bad("empty input"))?;
        if head.trim() != "%%MatrixMarket matrix coordinate complex general" {
            return Err(bad("unsupported header"));
        }
        let (mut k, mut eps, mut nm) = (None, None, None);
        let mut size = None;
        let mut entries = Vec::new();
        for line in lines {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('%') {
                let (key, val) = rest.split_once('=').ok_or_else(|| bad("comment without key"))?;
                let val = val.trim();
                match key.trim() {
                    "k" => {
                        let v: Vec<i64> = val.split_whitespace().map(|x| x.parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad("k"))?;
                        if v.len() != 2 {
                            return Err(bad("k"));
                        }
                        k = Some((v[0], v[1]));
                    }
                    "epsilon" => eps = Some(val.parse::<f64>().map_err(|_| bad("epsilon"))?),
                    "N" => nm = Some(val.parse::<usize>().map_err(|_| bad("N"))?),
                    _ => {}
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if size.is_none() {
                size = Some(f.iter().map(|x| x.parse::<usize>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|_| bad("size line"))?);
                continue;
            }
            if f.len() != 4 {
                return Err(bad("entry line"));
            }
            let i: usize = f[0].parse().map_err(|_| bad("row"))?;
            let j: usize = f[1].parse().map_err(|_| bad("col"))?;
            let re: f64 = f[2].parse().map_err(|_| bad("value"))?;
            let im: f64 = f[3].parse().map_err(|_| bad("value"))?;
            entries.push((i, j, Complex::new(T::lit(re), T::lit(im))));
        }
        let (k, eps, nm) = (k.ok_or_else(|| bad("missing k"))?, eps.ok_or_else(|| bad("missing epsilon"))?, nm.ok_or_else(|| bad("missing N"))?);
        let n = 2 * nm + 1;
        let mut m = Tridiagonal {
            sub: vec![Complex::zero(); n - 1],
            diag: vec![Complex::zero(); n],
            sup: vec![Complex::zero(); n - 1],
        };
        for (i, j, z) in entries {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(bad("index out of range"));
            }
            let (i, j) = (i - 1, j - 1);
            match j as i64 - i as i64 {
                0 => m.diag[i] = z,
                1 => m.sup[i] = z,
                -1 => m.sub[j] = z,
                _ => return Err(bad("entry outside the tridiagonal band")),
            }
        }
        Ok(SpectralBlock { k, epsilon: T::lit(eps), n_modes: nm, matrix: m })
    }
}

/// Unitary change of basis from `φ_n` to `1, √2 cos nθ, √2 sin nθ`, as a row-major matrix
/// whose columns are the real basis functions expanded in `φ_n`.
///
/// Column order: `1`, then `(cos nθ, sin nθ)` for `n = 1..=N`.
pub fn real_trig_transform<T: Real>(n_modes: usize) -> Vec<Complex<T>> {
    let dim = 2 * n_modes + 1;
    let mut t = vec![Complex::zero(); dim * dim];
    let r = T::FRAC_1_SQRT_2();
    let idx = |n: i64| (n + n_modes as i64) as usize;
    t[idx(0) * dim] = Complex::new(T::one(), T::zero());
    for n in 1..=n_modes as i64 {
        let (c, s) = (2 * n as usize - 1, 2 * n as usize);
        // cos nθ = (φ_n + φ_{−n})/2, sin nθ = (φ_{−n} − φ_n)/(2i) with φ_n = e^{−inθ}.
        t[idx(n) * dim + c] = Complex::new(r, T::zero());
        t[idx(-n) * dim + c] = Complex::new(r, T::zero());
        t[idx(-n) * dim + s] = Complex::new(T::zero(), -r);
        t[idx(n) * dim + s] = Complex::new(T::zero(), r);
    }
    t
}

/// Matrix-free product with the `(k, ε)` block; the truncation is read off the vector length.
pub fn apply_generator<T: Real>(k: (i64, i64), epsilon: T, v: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
    if v.len() % 2 == 0 {
        return Err(Error::LengthMismatch { expected: v.len() + 1, got: v.len() });
    }
    let n_modes = v.len() / 2;
    let (k1, k2) = (T::lit(k.0 as f64), T::lit(k.1 as f64));
    let half = T::lit(0.5);
    let upper = Complex::new(k1 * half, -k2 * half);
    let lower = Complex::new(k1 * half, k2 * half);
    let dim = v.len();
    Ok((0..dim)
        .map(|i| {
            let n: T = mode(i, n_modes);
            let mut s = Complex::new(T::zero(), -epsilon * n * n) * v[i];
            if i > 0 {
                s += lower * v[i - 1];
            }
            if i + 1 < dim {
                s += upper * v[i + 1];
            }
            s
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SobolevWeight<T> {
    pub s: T,
    pub epsilon: T,
    pub k: (i64, i64),
    pub n_modes: usize,
    /// `(1 + ε²(|k|² + n²))^{s/2}` for `n = −N..=N`.
    pub weights: Vec<T>,
}

impl<T: Real> SobolevWeight<T> {
    pub fn new(s: T, epsilon: T, k: (i64, i64), n_modes: usize) -> Self {
        let k2 = T::lit((k.0 * k.0 + k.1 * k.1) as f64);
        let weights = (0..2 * n_modes + 1)
            .map(|i| {
                let n: T = mode(i, n_modes);
                (T::one() + epsilon * epsilon * (k2 + n * n)).powf(s / T::lit(2.0))
            })
            .collect();
        Self { s, epsilon, k, n_modes, weights }
    }
}

pub fn sobolev_norm<T: Real>(w: &SobolevWeight<T>, c: &[Complex<T>]) -> Result<T> {
    if c.len() != w.weights.len() {
        return Err(Error::LengthMismatch { expected: w.weights.len(), got: c.len() });
    }
    let v: Vec<Complex<T>> = c.iter().zip(&w.weights).map(|(z, &x)| *z * x).collect();
    Ok(norm2(&v))
}
