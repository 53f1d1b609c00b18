// SPDX-License-Identifier: MIT OR Apache-2.0

#![forbid(unsafe_code)]

//! Sufficient statistics of a segment under a model basis, and the 2×2 linear
//! algebra the conjugate updates need.

use super::{ModelKind, MAX_COEF};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub(crate) type Mat<T> = [[T; MAX_COEF]; MAX_COEF];
pub(crate) type Vector<T> = [T; MAX_COEF];

pub(crate) fn mat_vec<T: Real>(dim: usize, m: &Mat<T>, v: &Vector<T>) -> Vector<T> {
    let mut out = [T::zero(); MAX_COEF];
    for i in 0..dim {
        for j in 0..dim {
            out[i] += m[i][j] * v[j];
        }
    }
    out
}

pub(crate) fn dot<T: Real>(dim: usize, a: &Vector<T>, b: &Vector<T>) -> T {
    (0..dim).map(|j| a[j] * b[j]).sum()
}

/// Cholesky factor of a symmetric positive definite matrix of order 1 or 2.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Chol<T> {
    dim: usize,
    l11: T,
    l21: T,
    l22: T,
}

impl<T: Real> Chol<T> {
    pub(crate) fn new(dim: usize, m: &Mat<T>) -> Option<Self> {
        if !(m[0][0] > T::zero()) || !m[0][0].is_finite() {
            return None;
        }
        let l11 = m[0][0].sqrt();
        if dim == 1 {
            return Some(Self { dim, l11, l21: T::zero(), l22: T::one() });
        }
        let l21 = m[1][0] / l11;
        let rem = m[1][1] - l21 * l21;
        // Relative pivot check guards against rounding-level singularity.
        if !(rem > m[1][1].abs() * T::epsilon() * T::lit(4.0)) || !rem.is_finite() {
            return None;
        }
        Some(Self { dim, l11, l21, l22: rem.sqrt() })
    }

    pub(crate) fn ln_det(&self) -> T {
        let two = T::lit(2.0);
        if self.dim == 1 {
            two * self.l11.ln()
        } else {
            two * (self.l11.ln() + self.l22.ln())
        }
    }

    pub(crate) fn solve(&self, b: &Vector<T>) -> Vector<T> {
        if self.dim == 1 {
            return [b[0] / (self.l11 * self.l11), T::zero()];
        }
        let z0 = b[0] / self.l11;
        let z1 = (b[1] - self.l21 * z0) / self.l22;
        let x1 = z1 / self.l22;
        let x0 = (z0 - self.l21 * x1) / self.l11;
        [x0, x1]
    }

    pub(crate) fn inverse(&self) -> Mat<T> {
        let c0 = self.solve(&[T::one(), T::zero()]);
        if self.dim == 1 {
            return [[c0[0], T::zero()], [T::zero(), T::zero()]];
        }
        let c1 = self.solve(&[T::zero(), T::one()]);
        let off = (c0[1] + c1[0]) * T::lit(0.5);
        [[c0[0], off], [off, c1[1]]]
    }
}

/// Basis-free moments of the observations of a segment.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SegmentMoments<T> {
    pub n: usize,
    pub sum_y: T,
    pub sum_yy: T,
    /// `sum_k k * y_k` with segment-relative `k`.
    pub sum_ky: T,
}

impl<T: Real> SegmentMoments<T> {
    pub fn from_values(values: &[T]) -> Self {
        let mut m = Self { n: 0, sum_y: T::zero(), sum_yy: T::zero(), sum_ky: T::zero() };
        for &y in values {
            m.push(y);
        }
        m
    }

    pub fn push(&mut self, y: T) {
        self.n += 1;
        self.sum_y += y;
        self.sum_yy += y * y;
        self.sum_ky += T::from_usize_lossy(self.n) * y;
    }
}

/// `X^T X`, `X^T y`, `y^T y` and `n` for one segment and basis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuffStats<T> {
    pub dim: usize,
    pub n: usize,
    pub xtx: Mat<T>,
    pub xty: Vector<T>,
    pub yty: T,
}

impl<T: Real> SuffStats<T> {
    fn two_column(m: &SegmentMoments<T>, sum_x: T, sum_xx: T, sum_xy: T) -> Self {
        let n = T::from_usize_lossy(m.n);
        Self {
            dim: 2,
            n: m.n,
            xtx: [[n, sum_x], [sum_x, sum_xx]],
            xty: [m.sum_y, sum_xy],
            yty: m.sum_yy,
        }
    }

    /// Statistics for a basis without a difficult parameter.
    pub fn from_moments(kind: ModelKind, m: &SegmentMoments<T>) -> Self {
        let n = T::from_usize_lossy(m.n);
        match kind {
            ModelKind::Mean => Self {
                dim: 1,
                n: m.n,
                xtx: [[n, T::zero()], [T::zero(), T::zero()]],
                xty: [m.sum_y, T::zero()],
                yty: m.sum_yy,
            },
            ModelKind::LinearTrend => {
                let sum_k = n * (n + T::one()) * T::lit(0.5);
                let sum_kk = n * (n + T::one()) * (T::lit(2.0) * n + T::one()) / T::lit(6.0);
                Self::two_column(m, sum_k, sum_kk, m.sum_ky)
            }
            _ => panic!("from_moments called for a model with a difficult parameter"),
        }
    }

    /// Statistics of `values` under `kind` at `theta`.
    pub fn compute(kind: ModelKind, theta: Option<T>, values: &[T]) -> Result<Self> {
        let theta = super::check_theta(kind, theta)?;
        let m = SegmentMoments::from_values(values);
        Ok(match kind {
            ModelKind::Mean | ModelKind::LinearTrend => Self::from_moments(kind, &m),
            _ => {
                let [sx, sxx, sxy] = basis_sums(kind, theta.unwrap(), values);
                Self::two_column(&m, sx, sxx, sxy)
            }
        })
    }

    /// Statistics at `theta` given precomputed moments and a per-θ basis sum triple.
    pub fn from_basis_sums(m: &SegmentMoments<T>, sums: [T; 3]) -> Self {
        Self::two_column(m, sums[0], sums[1], sums[2])
    }
}

/// `sum x_k`, `sum x_k^2`, `sum y_k x_k` for the second basis column of a
/// θ-model over segment-relative times `1..=values.len()`.
pub fn basis_sums<T: Real>(kind: ModelKind, theta: T, values: &[T]) -> [T; 3] {
    match kind {
        ModelKind::ExpDecay => {
            let rate = theta.exp();
            let r = (-rate).exp();
            let mut acc = T::zero();
            for &y in values.iter().rev() {
                acc = (acc + y) * r;
            }
            let n = values.len();
            [geometric_sum(rate, n), geometric_sum(rate + rate, n), acc]
        }
        ModelKind::Periodic => {
            let a = theta.recip();
            let (s, c) = a.sin_cos();
            let (mut re, mut im) = (T::zero(), T::zero());
            for &y in values.iter().rev() {
                let r0 = re + y;
                re = r0 * c - im * s;
                im = r0 * s + im * c;
            }
            let (sx, sxx) = sine_sums(a, values.len());
            [sx, sxx, im]
        }
        _ => panic!("basis_sums requires a model with a difficult parameter"),
    }
}

/// `sum_{k=1..n} exp(-rate k)`.
fn geometric_sum<T: Real>(rate: T, n: usize) -> T {
    let denom = (-rate).exp_m1();
    if denom == T::zero() {
        return T::from_usize_lossy(n);
    }
    let nn = T::from_usize_lossy(n);
    (-rate).exp() * (-rate * nn).exp_m1() / denom
}

/// `sum_{k=1..n} sin(a k)` and `sum_{k=1..n} sin(a k)^2`.
fn sine_sums<T: Real>(a: T, n: usize) -> (T, T) {
    let half = T::lit(0.5);
    let guard = T::lit(1e-3);
    let sa2 = (a * half).sin();
    if sa2.abs() < guard || a.sin().abs() < guard {
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for k in 1..=n {
            let v = (a * T::from_usize_lossy(k)).sin();
            s1 += v;
            s2 += v * v;
        }
        return (s1, s2);
    }
    let nn = T::from_usize_lossy(n);
    let s1 = (nn * a * half).sin() * ((nn + T::one()) * a * half).sin() / sa2;
    let cos_sum = (nn * a).sin() * ((nn + T::one()) * a).cos() / a.sin();
    (s1, nn * half - cos_sum * half)
}

/// Basis sums for many θ values at once; `out[i]` receives the triple for
/// `thetas[i]`. The inner loop runs across θ so that it vectorises.
pub fn basis_sums_batch<T: Real>(kind: ModelKind, values: &[T], thetas: &[T], out: &mut [[T; 3]]) {
    debug_assert_eq!(thetas.len(), out.len());
    let n = values.len();
    match kind {
        ModelKind::ExpDecay => {
            let mut rates = Vec::with_capacity(thetas.len());
            let mut acc = vec![T::zero(); thetas.len()];
            rates.extend(thetas.iter().map(|th| (-(th.exp())).exp()));
            for &y in values.iter().rev() {
                for (a, &r) in acc.iter_mut().zip(&rates) {
                    *a = (*a + y) * r;
                }
            }
            for ((o, th), a) in out.iter_mut().zip(thetas).zip(acc) {
                let rate = th.exp();
                *o = [geometric_sum(rate, n), geometric_sum(rate + rate, n), a];
            }
        }
        ModelKind::Periodic => {
            let m = thetas.len();
            let mut sc = Vec::with_capacity(m);
            sc.extend(thetas.iter().map(|th| th.recip().sin_cos()));
            let mut re = vec![T::zero(); m];
            let mut im = vec![T::zero(); m];
            for &y in values.iter().rev() {
                for ((r, i), &(s, c)) in re.iter_mut().zip(im.iter_mut()).zip(&sc) {
                    let r0 = *r + y;
                    *r = r0 * c - *i * s;
                    *i = r0 * s + *i * c;
                }
            }
            for ((o, th), i) in out.iter_mut().zip(thetas).zip(im) {
                let (sx, sxx) = sine_sums(th.recip(), n);
                *o = [sx, sxx, i];
            }
        }
        _ => panic!("basis_sums_batch requires a model with a difficult parameter"),
    }
}

/// First and second θ-derivatives of the basis column, alongside the column.
pub(crate) fn basis_with_derivatives<T: Real>(kind: ModelKind, theta: T, k: usize) -> (T, T, T) {
    let kk = T::from_usize_lossy(k);
    match kind {
        ModelKind::ExpDecay => {
            let lam = theta.exp();
            let x = (-lam * kk).exp();
            let lk = lam * kk;
            (x, -lk * x, (lk * lk - lk) * x)
        }
        ModelKind::Periodic => {
            let (s, c) = (kk / theta).sin_cos();
            let t2 = theta * theta;
            let dx = -kk / t2 * c;
            let d2x = T::lit(2.0) * kk / (t2 * theta) * c - kk * kk / (t2 * t2) * s;
            (s, dx, d2x)
        }
        _ => (T::zero(), T::zero(), T::zero()),
    }
}

/// Sums required by the analytic θ-derivatives of the marginal.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct DerivSums<T> {
    pub x: T,
    pub xx: T,
    pub xy: T,
    pub dx: T,
    pub x_dx: T,
    pub dx_dx: T,
    pub d2x: T,
    pub x_d2x: T,
    pub y_dx: T,
    pub y_d2x: T,
}

pub(crate) fn derivative_sums<T: Real>(kind: ModelKind, theta: T, values: &[T]) -> DerivSums<T> {
    let mut s = DerivSums::<T>::default();
    for (i, &y) in values.iter().enumerate() {
        let (x, dx, d2x) = basis_with_derivatives(kind, theta, i + 1);
        s.x += x;
        s.xx += x * x;
        s.xy += x * y;
        s.dx += dx;
        s.x_dx += x * dx;
        s.dx_dx += dx * dx;
        s.d2x += d2x;
        s.x_d2x += x * d2x;
        s.y_dx += y * dx;
        s.y_d2x += y * d2x;
    }
    s
}

pub(crate) fn numerical(start: usize, len: usize, theta: Option<f64>, detail: impl Into<String>) -> Error {
    Error::Numerical { start, len, theta, detail: detail.into() }
}
