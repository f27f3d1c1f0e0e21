//! Truncated multivariate Taylor jets.
//!
//! A [`Jet`] stores the Taylor coefficients of a smooth function about a point,
//! up to a fixed total degree. Differentiation lowers the number of trustworthy
//! degrees by one, which is tracked in `valid`, so nested applications of
//! first-order differential operators stay exact as long as the space was built
//! with enough order.

use crate::scalar::Real;
use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

#[derive(Debug)]
pub struct JetSpace {
    nvars: usize,
    order: usize,
    exps: Vec<Vec<u8>>,
    // Number of monomials of degree <= s, for s = 0..=order.
    upto: Vec<usize>,
    // Product table sorted by total degree of the target monomial.
    mul: Vec<(u32, u32, u32)>,
    mul_upto: Vec<usize>,
    // deriv[i][alpha] = (index of alpha + e_i, alpha_i + 1) when deg(alpha) < order.
    deriv: Vec<Vec<(u32, u32)>>,
}

impl JetSpace {
    pub fn new(nvars: usize, order: usize) -> Arc<Self> {
        let mut exps: Vec<Vec<u8>> = Vec::new();
        let mut upto = Vec::with_capacity(order + 1);
        for s in 0..=order {
            let mut cur = vec![0u8; nvars];
            push_degree(&mut exps, &mut cur, 0, s);
            upto.push(exps.len());
        }
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let degree = |e: &[u8]| e.iter().map(|&x| x as usize).sum::<usize>();

        let mut mul = Vec::new();
        let mut mul_upto = Vec::with_capacity(order + 1);
        for s in 0..=order {
            let lo = if s == 0 { 0 } else { upto[s - 1] };
            for t in lo..upto[s] {
                let target = &exps[t];
                for (a, ea) in exps[..upto[s]].iter().enumerate() {
                    if ea.iter().zip(target).all(|(x, y)| x <= y) {
                        let eb: Vec<u8> = target.iter().zip(ea).map(|(y, x)| y - x).collect();
                        let b = index[&eb];
                        mul.push((a as u32, b as u32, t as u32));
                    }
                }
            }
            mul_upto.push(mul.len());
        }

        let mut deriv = vec![Vec::new(); nvars];
        for (i, row) in deriv.iter_mut().enumerate() {
            for e in &exps {
                if degree(e) < order {
                    let mut up = e.clone();
                    up[i] += 1;
                    row.push((index[&up] as u32, up[i] as u32));
                }
            }
        }

        Arc::new(Self { nvars, order, exps, upto, mul, mul_upto, deriv })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.exps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// Exponent vector of the `i`-th stored monomial.
    pub fn exponents(&self, i: usize) -> &[u8] {
        &self.exps[i]
    }
}

fn push_degree(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, left: usize) {
    if pos + 1 == cur.len() {
        cur[pos] = left as u8;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if cur.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=left).rev() {
        cur[pos] = k as u8;
        push_degree(out, cur, pos + 1, left - k);
    }
    cur[pos] = 0;
}

#[derive(Debug, Clone)]
pub struct Jet<T> {
    space: Arc<JetSpace>,
    c: Vec<T>,
    valid: usize,
}

impl<T: Real> Jet<T> {
    pub fn constant(space: &Arc<JetSpace>, value: T) -> Self {
        let mut c = vec![T::zero(); space.len()];
        c[0] = value;
        Self { space: space.clone(), c, valid: space.order }
    }

    /// The coordinate function `x_i`, centred at `value`.
    pub fn var(space: &Arc<JetSpace>, i: usize, value: T) -> Self {
        let mut j = Self::constant(space, value);
        if space.order > 0 {
            j.c[1 + i] = T::one();
        }
        j
    }

    pub fn space(&self) -> &Arc<JetSpace> {
        &self.space
    }

    pub fn value(&self) -> T {
        self.c[0]
    }

    /// Highest total degree whose coefficients are still exact.
    pub fn valid_order(&self) -> usize {
        self.valid
    }

    pub fn coefficients(&self) -> &[T] {
        &self.c[..self.space.upto[self.valid]]
    }

    /// Partial derivative of the represented function at the centre, for a multi-index.
    pub fn partial(&self, alpha: &[u8]) -> Option<T> {
        let deg: usize = alpha.iter().map(|&a| a as usize).sum();
        if deg > self.valid {
            return None;
        }
        let idx = self.space.exps[..self.space.upto[deg]].iter().position(|e| e == alpha)?;
        let fact: f64 = alpha.iter().map(|&a| (1..=a as u32).product::<u32>() as f64).product();
        Some(self.c[idx] * T::lit(fact))
    }

    pub fn derivative(&self, i: usize) -> Self {
        assert!(self.valid > 0, "jet exhausted: raise the order of the jet space");
        let mut c = vec![T::zero(); self.space.len()];
        let n = self.space.upto[self.valid - 1];
        for (alpha, &(src, f)) in self.space.deriv[i][..n].iter().enumerate() {
            c[alpha] = self.c[src as usize] * T::lit(f as f64);
        }
        Self { space: self.space.clone(), c, valid: self.valid - 1 }
    }

    pub fn scale(&self, a: T) -> Self {
        let n = self.space.upto[self.valid];
        let mut c = vec![T::zero(); self.space.len()];
        for (o, x) in c[..n].iter_mut().zip(&self.c[..n]) {
            *o = *x * a;
        }
        Self { space: self.space.clone(), c, valid: self.valid }
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert!(Arc::ptr_eq(&self.space, &other.space));
        let valid = self.valid.min(other.valid);
        let n = self.space.upto[valid];
        let mut c = vec![T::zero(); self.space.len()];
        for i in 0..n {
            c[i] = f(self.c[i], other.c[i]);
        }
        Self { space: self.space.clone(), c, valid }
    }

    fn product(&self, other: &Self) -> Self {
        debug_assert!(Arc::ptr_eq(&self.space, &other.space));
        let valid = self.valid.min(other.valid);
        let mut c = vec![T::zero(); self.space.len()];
        for &(a, b, t) in &self.space.mul[..self.space.mul_upto[valid]] {
            c[t as usize] += self.c[a as usize] * other.c[b as usize];
        }
        Self { space: self.space.clone(), c, valid }
    }

    /// Evaluates `g(self)` from the Taylor coefficients `g^(k)(a) / k!` of `g` at the centre value.
    fn compose(&self, taylor: &[T]) -> Self {
        let mut h = self.clone();
        h.c[0] = T::zero();
        let mut acc = Self::constant(&self.space, taylor[self.valid]);
        acc.valid = self.valid;
        for k in (0..self.valid).rev() {
            acc = acc.product(&h);
            acc.c[0] += taylor[k];
        }
        acc
    }

    fn taylor_sin_cos(&self, cosine: bool) -> Vec<T> {
        let a = self.c[0];
        let (s, c) = (a.sin(), a.cos());
        let cycle = if cosine { [c, -s, -c, s] } else { [s, c, -s, -c] };
        let mut fact = T::one();
        (0..=self.valid)
            .map(|k| {
                if k > 0 {
                    fact *= T::lit(k as f64);
                }
                cycle[k % 4] / fact
            })
            .collect()
    }
}

impl<T: Real> Add for &Jet<T> {
    type Output = Jet<T>;
    fn add(self, o: &Jet<T>) -> Jet<T> {
        self.zip(o, |a, b| a + b)
    }
}

impl<T: Real> Sub for &Jet<T> {
    type Output = Jet<T>;
    fn sub(self, o: &Jet<T>) -> Jet<T> {
        self.zip(o, |a, b| a - b)
    }
}

impl<T: Real> Mul for &Jet<T> {
    type Output = Jet<T>;
    fn mul(self, o: &Jet<T>) -> Jet<T> {
        self.product(o)
    }
}

impl<T: Real> Neg for &Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        self.scale(-T::one())
    }
}

macro_rules! owned_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl<T: Real> $tr for Jet<T> {
            type Output = Jet<T>;
            fn $m(self, o: Jet<T>) -> Jet<T> {
                (&self).$m(&o)
            }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul);

impl<T: Real> Neg for Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        -&self
    }
}

/// Ring of quantities that smooth coefficient formulas can be evaluated in:
/// plain scalars for values, jets for values together with derivatives.
pub trait Analytic<T: Real>:
    Clone + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    /// A constant living in the same space as `self`.
    fn lift(&self, x: T) -> Self;
    fn value(&self) -> T;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn recip(&self) -> Self;
    fn scale(&self, a: T) -> Self;

    fn powi(&self, n: u32) -> Self {
        let mut acc = self.lift(T::one());
        for _ in 0..n {
            acc = acc * self.clone();
        }
        acc
    }
}

impl<T: Real> Analytic<T> for T {
    fn lift(&self, x: T) -> Self {
        x
    }
    fn value(&self) -> T {
        *self
    }
    fn sin(&self) -> Self {
        Float::sin(*self)
    }
    fn cos(&self) -> Self {
        Float::cos(*self)
    }
    fn recip(&self) -> Self {
        Float::recip(*self)
    }
    fn scale(&self, a: T) -> Self {
        *self * a
    }
}

use num_traits::Float;

impl<T: Real> Analytic<T> for Jet<T> {
    fn lift(&self, x: T) -> Self {
        Jet::constant(&self.space, x)
    }
    fn value(&self) -> T {
        self.c[0]
    }
    fn sin(&self) -> Self {
        self.compose(&self.taylor_sin_cos(false))
    }
    fn cos(&self) -> Self {
        self.compose(&self.taylor_sin_cos(true))
    }
    fn recip(&self) -> Self {
        let inv = self.c[0].recip();
        let mut t = Vec::with_capacity(self.valid + 1);
        let mut p = inv;
        for _ in 0..=self.valid {
            t.push(p);
            p = -p * inv;
        }
        self.compose(&t)
    }
    fn scale(&self, a: T) -> Self {
        Jet::scale(self, a)
    }
}
