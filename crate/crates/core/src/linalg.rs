//! Complex tridiagonal matrices and their LU factorization with partial pivoting.

use crate::error::{Error, Result};
use crate::scalar::Real;
use num_complex::Complex;
use num_traits::Zero;

#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal<T> {
    /// Entries `(i+1, i)`.
    pub sub: Vec<Complex<T>>,
    pub diag: Vec<Complex<T>>,
    /// Entries `(i, i+1)`.
    pub sup: Vec<Complex<T>>,
}

fn abs1<T: Real>(z: Complex<T>) -> T {
    z.re.abs() + z.im.abs()
}

impl<T: Real> Tridiagonal<T> {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.sub[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// `xᵀ A`, returned as a column.
    pub fn vecmat(&self, x: &[Complex<T>]) -> Vec<Complex<T>> {
        self.transpose().matvec(x)
    }

    pub fn transpose(&self) -> Self {
        Self { sub: self.sup.clone(), diag: self.diag.clone(), sup: self.sub.clone() }
    }

    pub fn shifted(&self, sigma: Complex<T>) -> Self {
        Self { sub: self.sub.clone(), diag: self.diag.iter().map(|&d| d - sigma).collect(), sup: self.sup.clone() }
    }

    pub fn norm1(&self) -> T {
        let n = self.dim();
        (0..n)
            .map(|j| {
                let mut s = abs1(self.diag[j]);
                if j > 0 {
                    s += abs1(self.sup[j - 1]);
                }
                if j + 1 < n {
                    s += abs1(self.sub[j]);
                }
                s
            })
            .fold(T::zero(), T::max)
    }

    pub fn to_dense(&self) -> Vec<Complex<T>> {
        let n = self.dim();
        let mut m = vec![Complex::zero(); n * n];
        for i in 0..n {
            m[i * n + i] = self.diag[i];
            if i + 1 < n {
                m[i * n + i + 1] = self.sup[i];
                m[(i + 1) * n + i] = self.sub[i];
            }
        }
        m
    }

    pub fn lu(&self) -> Result<TridiagonalLu<T>> {
        TridiagonalLu::new(self)
    }
}

/// `P A = L U` with `U` of upper bandwidth two.
#[derive(Debug, Clone)]
pub struct TridiagonalLu<T> {
    dl: Vec<Complex<T>>,
    d: Vec<Complex<T>>,
    du: Vec<Complex<T>>,
    du2: Vec<Complex<T>>,
    swap: Vec<bool>,
}

impl<T: Real> TridiagonalLu<T> {
    pub fn new(a: &Tridiagonal<T>) -> Result<Self> {
        let n = a.dim();
        let mut dl = a.sub.clone();
        let mut d = a.diag.clone();
        let mut du = a.sup.clone();
        let mut du2 = vec![Complex::zero(); n.saturating_sub(2)];
        let mut swap = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if abs1(d[i]) >= abs1(dl[i]) {
                if !d[i].is_zero() {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] = d[i + 1] - fact * du[i];
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let temp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = temp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                swap[i] = true;
            }
        }
        let scale = a.norm1().max(T::min_positive_value());
        let tiny = T::epsilon() * scale;
        if let Some(i) = d.iter().position(|&p| abs1(p) <= tiny) {
            return Err(Error::Singular(format!("zero pivot at row {i} (|pivot| <= {:e})", tiny.as_f64())));
        }
        Ok(Self { dl, d, du, du2, swap })
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    pub fn solve_in_place(&self, b: &mut [Complex<T>]) {
        let n = self.dim();
        for i in 0..n.saturating_sub(1) {
            if !self.swap[i] {
                b[i + 1] = b[i + 1] - self.dl[i] * b[i];
            } else {
                let temp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = temp - self.dl[i] * b[i];
            }
        }
        if n == 0 {
            return;
        }
        b[n - 1] = b[n - 1] / self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose_in_place(&self, b: &mut [Complex<T>]) {
        let n = self.dim();
        if n == 0 {
            return;
        }
        b[0] = b[0] / self.d[0];
        if n > 1 {
            b[1] = (b[1] - self.du[0] * b[0]) / self.d[1];
        }
        for i in 2..n {
            b[i] = (b[i] - self.du[i - 1] * b[i - 1] - self.du2[i - 2] * b[i - 2]) / self.d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            if !self.swap[i] {
                b[i] = b[i] - self.dl[i] * b[i + 1];
            } else {
                let temp = b[i + 1];
                b[i + 1] = b[i] - self.dl[i] * temp;
                b[i] = temp;
            }
        }
    }

    pub fn solve(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

pub fn norm2<T: Real>(x: &[Complex<T>]) -> T {
    let scale = x.iter().map(|z| z.re.abs().max(z.im.abs())).fold(T::zero(), T::max);
    if scale == T::zero() {
        return T::zero();
    }
    let s: T = x.iter().map(|z| (z.re / scale).powi(2) + (z.im / scale).powi(2)).fold(T::zero(), |a, b| a + b);
    scale * s.sqrt()
}

/// Bilinear pairing `Σ a_i b_i` (no conjugation).
pub fn bilinear<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(Complex::zero(), |acc, (x, y)| acc + *x * *y)
}

/// Hermitian inner product `Σ conj(a_i) b_i`.
pub fn dot<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(Complex::zero(), |acc, (x, y)| acc + x.conj() * *y)
}
