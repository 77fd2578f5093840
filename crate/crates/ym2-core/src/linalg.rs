//! Small dense complex matrices.
//!
//! Everything here is sized for D <= 8, so plain O(n^3) loops are used.
//! Storage is inline up to 4x4 to keep the Monte-Carlo inner loop off the heap.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

pub type C64 = Complex64;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Square complex matrix, row-major.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CMat {
    n: usize,
    data: SmallVec<[C64; 16]>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        CMat { n, data: SmallVec::from_elem(ZERO, n * n) }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    pub fn scalar(n: usize, c: C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = c;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    /// Builds from row-major entries; panics if the length is not a square.
    pub fn from_row_major(n: usize, entries: &[C64]) -> Self {
        assert_eq!(entries.len(), n * n, "expected {} entries", n * n);
        CMat { n, data: SmallVec::from_slice(entries) }
    }

    pub fn diag(entries: &[C64]) -> Self {
        let n = entries.len();
        let mut m = Self::zeros(n);
        for (i, e) in entries.iter().enumerate() {
            m.data[i * n + i] = *e;
        }
        m
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.n + j] = v;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        let n = self.n;
        CMat::from_fn(n, |i, j| self.data[j * n + i].conj())
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        CMat::from_fn(n, |i, j| self.data[j * n + i])
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self.data[i * self.n + i]).sum()
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut m = self.clone();
        for v in m.data.iter_mut() {
            *v *= c;
        }
        m
    }

    pub fn scale_re(&self, c: f64) -> Self {
        let mut m = self.clone();
        for v in m.data.iter_mut() {
            *v *= c;
        }
        m
    }

    /// self += c * other
    pub fn axpy(&mut self, c: f64, other: &CMat) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * c;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let n = self.n;
        (0..n)
            .map(|j| (0..n).map(|i| self.data[i * n + j].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn dist_max(&self, other: &CMat) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn commutator(&self, other: &CMat) -> CMat {
        &(self * other) - &(other * self)
    }

    /// In-place product `out = a * b`; `out` must not alias.
    pub fn mul_into(a: &CMat, b: &CMat, out: &mut CMat) {
        let n = a.n;
        debug_assert_eq!(n, b.n);
        if out.n != n {
            *out = CMat::zeros(n);
        }
        match n {
            1 => out.data[0] = a.data[0] * b.data[0],
            2 => {
                let (a, b) = (&a.data, &b.data);
                let r = [
                    a[0] * b[0] + a[1] * b[2],
                    a[0] * b[1] + a[1] * b[3],
                    a[2] * b[0] + a[3] * b[2],
                    a[2] * b[1] + a[3] * b[3],
                ];
                out.data.copy_from_slice(&r);
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        let mut s = ZERO;
                        for k in 0..n {
                            s += a.data[i * n + k] * b.data[k * n + j];
                        }
                        out.data[i * n + j] = s;
                    }
                }
            }
        }
    }

    /// LU factorisation with partial pivoting. Returns None if a pivot
    /// vanishes.
    fn lu(&self) -> Option<(CMat, Vec<usize>, f64)> {
        let n = self.n;
        let mut a = self.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let mut p = k;
            let mut best = a.data[k * n + k].norm();
            for i in k + 1..n {
                let v = a.data[i * n + k].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= 1e-300 || best <= scale * 1e-13 {
                return None;
            }
            if p != k {
                for j in 0..n {
                    a.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let piv = a.data[k * n + k];
            for i in k + 1..n {
                let f = a.data[i * n + k] / piv;
                a.data[i * n + k] = f;
                for j in k + 1..n {
                    let t = a.data[k * n + j];
                    a.data[i * n + j] -= f * t;
                }
            }
        }
        Some((a, perm, sign))
    }

    pub fn det(&self) -> C64 {
        match self.n {
            1 => self.data[0],
            2 => self.data[0] * self.data[3] - self.data[1] * self.data[2],
            n => match self.lu() {
                None => ZERO,
                Some((lu, _, sign)) => {
                    let mut d = C64::new(sign, 0.0);
                    for i in 0..n {
                        d *= lu.data[i * n + i];
                    }
                    d
                }
            },
        }
    }

    /// Solves `self * X = rhs`.
    pub fn solve(&self, rhs: &CMat) -> Option<CMat> {
        let n = self.n;
        if n == 1 {
            if self.data[0].norm() == 0.0 {
                return None;
            }
            return Some(rhs.scale(ONE / self.data[0]));
        }
        if n == 2 {
            let d = self.det();
            if d.norm() <= 1e-300 {
                return None;
            }
            let inv = CMat::from_row_major(
                2,
                &[self.data[3] / d, -self.data[1] / d, -self.data[2] / d, self.data[0] / d],
            );
            return Some(&inv * rhs);
        }
        let (lu, perm, _) = self.lu()?;
        let mut x = CMat::zeros(n);
        for col in 0..n {
            let mut y = vec![ZERO; n];
            for i in 0..n {
                let mut s = rhs.data[perm[i] * n + col];
                for k in 0..i {
                    s -= lu.data[i * n + k] * y[k];
                }
                y[i] = s;
            }
            for i in (0..n).rev() {
                let mut s = y[i];
                for k in i + 1..n {
                    s -= lu.data[i * n + k] * x.data[k * n + col];
                }
                x.data[i * n + col] = s / lu.data[i * n + i];
            }
        }
        Some(x)
    }

    pub fn inverse(&self) -> Option<CMat> {
        self.solve(&CMat::identity(self.n))
    }

    /// Matrix exponential by scaling and squaring with the diagonal [6/6]
    /// Pade approximant (local error O(X^13)).
    pub fn expm(&self) -> CMat {
        let n = self.n;
        if n == 1 {
            return CMat::scalar(1, self.data[0].exp());
        }
        let norm = self.norm1();
        let mut s = 0i32;
        if norm > 0.5 {
            s = (norm / 0.5).log2().ceil() as i32;
        }
        let x = if s > 0 { self.scale_re(0.5f64.powi(s)) } else { self.clone() };
        const C: [f64; 7] = [
            1.0,
            0.5,
            5.0 / 44.0,
            1.0 / 66.0,
            1.0 / 792.0,
            1.0 / 15840.0,
            1.0 / 665280.0,
        ];
        let x2 = &x * &x;
        let x4 = &x2 * &x2;
        let x6 = &x4 * &x2;
        let mut odd = CMat::scalar(n, C64::new(C[1], 0.0));
        odd.axpy(C[3], &x2);
        odd.axpy(C[5], &x4);
        let u = &x * &odd;
        let mut v = CMat::scalar(n, C64::new(C[0], 0.0));
        v.axpy(C[2], &x2);
        v.axpy(C[4], &x4);
        v.axpy(C[6], &x6);
        let num = &v + &u;
        let den = &v - &u;
        let mut r = den.solve(&num).expect("Pade denominator is nonsingular for scaled input");
        for _ in 0..s {
            r = &r * &r;
        }
        r
    }

    /// Unitary polar factor by the scaled Newton iteration
    /// U <- (g U + (g U)^{-*}) / 2. Returns None for (near) singular input.
    pub fn polar_unitary(&self) -> Option<CMat> {
        let n = self.n;
        let scale = self.frobenius();
        if scale == 0.0 || !self.is_finite() {
            return None;
        }
        let det = self.det().norm();
        let rel = det / scale.powi(n as i32);
        if rel < 1e-13 {
            return None;
        }
        let mut u = self.clone();
        for _ in 0..100 {
            let inv = u.inverse()?;
            let g = (inv.frobenius() / u.frobenius()).sqrt();
            let next = (&u.scale_re(g) + &inv.adjoint().scale_re(1.0 / g)).scale_re(0.5);
            let diff = next.dist_max(&u);
            u = next;
            if diff < 1e-15 * (n as f64) {
                break;
            }
        }
        Some(u)
    }
}

impl<'a> Mul<&'a CMat> for &'a CMat {
    type Output = CMat;
    fn mul(self, rhs: &'a CMat) -> CMat {
        let mut out = CMat::zeros(self.n);
        CMat::mul_into(self, rhs, &mut out);
        out
    }
}

impl<'a> Add<&'a CMat> for &'a CMat {
    type Output = CMat;
    fn add(self, rhs: &'a CMat) -> CMat {
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
        out
    }
}

impl<'a> Sub<&'a CMat> for &'a CMat {
    type Output = CMat;
    fn sub(self, rhs: &'a CMat) -> CMat {
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
        out
    }
}

impl AddAssign<&CMat> for CMat {
    fn add_assign(&mut self, rhs: &CMat) {
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl Neg for &CMat {
    type Output = CMat;
    fn neg(self) -> CMat {
        self.scale_re(-1.0)
    }
}
