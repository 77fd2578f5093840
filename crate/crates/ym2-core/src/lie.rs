//! Compact matrix groups U(1), SU(2), SU(n), U(n) and their Lie algebras.
//!
//! The inner product on the algebra is `<X, Y> = -Re tr(XY)`. The basis is the
//! generalized Gell-Mann basis, orthonormal under that product, and the Casimir
//! matrix is always computed from the basis.

use crate::error::{Error, Result};
use crate::linalg::{CMat, C64, I, ONE};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Group elements are unitary D x D matrices.
pub type GroupElement = CMat;
/// Algebra elements are skew-Hermitian D x D matrices.
pub type AlgebraElement = CMat;

pub const MAX_DIM: usize = 8;
pub const DEFAULT_RETRACT_EVERY: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupKind {
    U1,
    SU2,
    SUN(usize),
    UN(usize),
}

impl GroupKind {
    pub fn matrix_dim(self) -> usize {
        match self {
            GroupKind::U1 => 1,
            GroupKind::SU2 => 2,
            GroupKind::SUN(n) | GroupKind::UN(n) => n,
        }
    }

    pub fn is_special(self) -> bool {
        matches!(self, GroupKind::SU2 | GroupKind::SUN(_))
    }

    pub fn is_abelian(self) -> bool {
        matches!(self, GroupKind::U1 | GroupKind::UN(1) | GroupKind::SUN(1))
    }
}

impl fmt::Display for GroupKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupKind::U1 => write!(f, "u1"),
            GroupKind::SU2 => write!(f, "su2"),
            GroupKind::SUN(n) => write!(f, "sun:{n}"),
            GroupKind::UN(n) => write!(f, "un:{n}"),
        }
    }
}

impl FromStr for GroupKind {
    type Err = Error;

    /// Accepts `u1`, `su2`, `sun:N`, `un:N` (case-insensitive).
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let parse_n = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| Error::UnsupportedGroup(format!("bad dimension in `{s}`")))
        };
        match t.as_str() {
            "u1" => Ok(GroupKind::U1),
            "su2" => Ok(GroupKind::SU2),
            _ => {
                if let Some(rest) = t.strip_prefix("sun:") {
                    Ok(GroupKind::SUN(parse_n(rest)?))
                } else if let Some(rest) = t.strip_prefix("un:") {
                    Ok(GroupKind::UN(parse_n(rest)?))
                } else {
                    Err(Error::UnsupportedGroup(s.to_string()))
                }
            }
        }
    }
}

/// `<X, Y> = -Re tr(XY)`.
pub fn inner(x: &CMat, y: &CMat) -> f64 {
    let n = x.n();
    let (a, b) = (x.as_slice(), y.as_slice());
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += (a[i * n + k] * b[k * n + i]).re;
        }
    }
    -s
}

/// An immutable group description, shareable across threads.
#[derive(Clone, Debug)]
pub struct GroupContext {
    kind: GroupKind,
    dim: usize,
    basis: Vec<AlgebraElement>,
    casimir: CMat,
    retract_every: usize,
}

fn gell_mann_basis(n: usize, with_center: bool) -> Vec<CMat> {
    let s2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::new();
    for j in 0..n {
        for k in (j + 1)..n {
            let mut sym = CMat::zeros(n);
            sym.set(j, k, C64::new(0.0, s2));
            sym.set(k, j, C64::new(0.0, s2));
            out.push(sym);
            let mut anti = CMat::zeros(n);
            anti.set(j, k, C64::new(s2, 0.0));
            anti.set(k, j, C64::new(-s2, 0.0));
            out.push(anti);
        }
    }
    for l in 1..n {
        let c = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut d = CMat::zeros(n);
        for i in 0..l {
            d.set(i, i, C64::new(0.0, c));
        }
        d.set(l, l, C64::new(0.0, -(l as f64) * c));
        out.push(d);
    }
    if with_center {
        out.push(CMat::scalar(n, C64::new(0.0, 1.0 / (n as f64).sqrt())));
    }
    out
}

fn casimir_of(dim: usize, basis: &[CMat]) -> CMat {
    let mut k = CMat::zeros(dim);
    for xi in basis {
        k += &(xi * xi);
    }
    k
}

/// Uniformly random orthogonal m x m matrix (row-major), by Gram-Schmidt on a
/// Gaussian matrix.
pub fn random_orthogonal<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    while rows.len() < m {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= d * ri;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

impl GroupContext {
    /// Builds the group, rejecting matrix sizes above 8.
    pub fn new(kind: GroupKind) -> Result<Self> {
        let dim = kind.matrix_dim();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedGroup(format!(
                "{kind}: matrix size must be between 1 and {MAX_DIM}"
            )));
        }
        let kind = match kind {
            GroupKind::SUN(2) => GroupKind::SU2,
            GroupKind::UN(1) => GroupKind::U1,
            k => k,
        };
        let basis = gell_mann_basis(dim, !kind.is_special());
        let casimir = casimir_of(dim, &basis);
        Ok(GroupContext { kind, dim, basis, casimir, retract_every: DEFAULT_RETRACT_EVERY })
    }

    /// Same group with basis `xi'_i = sum_j o[i][j] xi_j` for an orthogonal `o`.
    /// The Casimir is recomputed from the new basis.
    pub fn with_rotated_basis(&self, o: &[f64]) -> Result<Self> {
        let m = self.basis.len();
        if o.len() != m * m {
            return Err(Error::InvalidArgument(format!("rotation must be {m}x{m}")));
        }
        for i in 0..m {
            for j in 0..m {
                let d: f64 = (0..m).map(|k| o[i * m + k] * o[j * m + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (d - want).abs() > 1e-10 {
                    return Err(Error::InvalidArgument("rotation is not orthogonal".into()));
                }
            }
        }
        let basis: Vec<CMat> = (0..m)
            .map(|i| {
                let mut x = CMat::zeros(self.dim);
                for j in 0..m {
                    x.axpy(o[i * m + j], &self.basis[j]);
                }
                x
            })
            .collect();
        let casimir = casimir_of(self.dim, &basis);
        Ok(GroupContext { basis, casimir, ..self.clone() })
    }

    /// Sets how many group multiplications may pass between polar retractions.
    pub fn with_retract_every(mut self, every: usize) -> Self {
        self.retract_every = every.max(1);
        self
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn matrix_dim(&self) -> usize {
        self.dim
    }

    pub fn algebra_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn basis(&self) -> &[AlgebraElement] {
        &self.basis
    }

    pub fn casimir(&self) -> &CMat {
        &self.casimir
    }

    pub fn retract_every(&self) -> usize {
        self.retract_every
    }

    pub fn identity(&self) -> GroupElement {
        CMat::identity(self.dim)
    }

    pub fn zero(&self) -> AlgebraElement {
        CMat::zeros(self.dim)
    }

    /// Basis coordinates `<X, xi_i>`.
    pub fn coords(&self, x: &AlgebraElement) -> Vec<f64> {
        self.basis.iter().map(|b| inner(x, b)).collect()
    }

    pub fn from_coords(&self, c: &[f64]) -> AlgebraElement {
        debug_assert_eq!(c.len(), self.basis.len());
        let mut x = CMat::zeros(self.dim);
        for (ci, b) in c.iter().zip(&self.basis) {
            x.axpy(*ci, b);
        }
        x
    }

    /// Exponential map. U(1) and SU(2) use closed forms.
    pub fn exp_map(&self, x: &AlgebraElement) -> GroupElement {
        match self.kind {
            GroupKind::U1 => CMat::scalar(1, x.get(0, 0).exp()),
            GroupKind::SU2 => su2_exp(x),
            _ => x.expm(),
        }
    }

    /// Nearest group element by polar decomposition; SU families get their
    /// phase fixed so that det = 1.
    pub fn retract(&self, m: &CMat) -> Result<GroupElement> {
        let mut u = m
            .polar_unitary()
            .ok_or_else(|| Error::Degenerate("cannot retract a singular matrix".into()))?;
        if self.kind.is_special() {
            let phase = u.det().arg() / self.dim as f64;
            u = u.scale(C64::from_polar(1.0, -phase));
        }
        Ok(u)
    }

    /// `Ad_g X = g X g^{-1}`, with `g^{-1} = g*`.
    pub fn adjoint_group(&self, g: &GroupElement, x: &AlgebraElement) -> AlgebraElement {
        if self.dim == 1 {
            return x.clone();
        }
        &(g * x) * &g.adjoint()
    }

    /// `Ad_{g^{-1}} X = g* X g`.
    pub fn adjoint_group_inv(&self, g: &GroupElement, x: &AlgebraElement) -> AlgebraElement {
        if self.dim == 1 {
            return x.clone();
        }
        &(&g.adjoint() * x) * g
    }

    /// Matrix of `Ad_g` in the basis: column j holds the coordinates of `Ad_g xi_j`.
    pub fn ad_matrix(&self, g: &GroupElement) -> Vec<f64> {
        let m = self.basis.len();
        let mut out = vec![0.0; m * m];
        for (j, b) in self.basis.iter().enumerate() {
            let c = self.coords(&self.adjoint_group(g, b));
            for i in 0..m {
                out[i * m + j] = c[i];
            }
        }
        out
    }

    /// `sum_xi N(0, variance) xi`.
    pub fn sample_algebra_gaussian<R: Rng + ?Sized>(
        &self,
        variance: f64,
        rng: &mut R,
    ) -> AlgebraElement {
        assert!(variance >= 0.0, "variance must be non-negative");
        let sd = variance.sqrt();
        let mut x = CMat::zeros(self.dim);
        for b in &self.basis {
            let z: f64 = rng.sample(StandardNormal);
            x.axpy(sd * z, b);
        }
        x
    }

    /// Group Brownian motion at time `t`: `exp(dM_steps) ... exp(dM_1)` with
    /// Gaussian increments of variance `t/steps` per coordinate.
    pub fn brownian_sample<R: Rng + ?Sized>(
        &self,
        t: f64,
        steps: usize,
        rng: &mut R,
    ) -> GroupElement {
        assert!(t >= 0.0 && steps >= 1);
        let mut acc = ProductAccumulator::new(self);
        if t == 0.0 {
            return acc.finish();
        }
        let var = t / steps as f64;
        for _ in 0..steps {
            let x = self.sample_algebra_gaussian(var, rng);
            acc.left_mul(&self.exp_map(&x));
        }
        acc.finish()
    }

    /// `E[g_t] = exp(kappa t / 2)`.
    pub fn heat_mean(&self, t: f64) -> CMat {
        self.casimir.scale_re(0.5 * t).expm()
    }

    /// `max |g*g - I|`, plus `|det g - 1|` for SU families.
    pub fn group_defect(&self, g: &CMat) -> f64 {
        let mut d = (&g.adjoint() * g).dist_max(&CMat::identity(self.dim));
        if self.kind.is_special() {
            d = d.max((g.det() - ONE).norm());
        }
        d
    }

    /// `max |X + X*|`, plus `|tr X|` for SU families.
    pub fn algebra_defect(&self, x: &CMat) -> f64 {
        let mut d = (x + &x.adjoint()).max_abs();
        if self.kind.is_special() {
            d = d.max(x.trace().norm());
        }
        d
    }
}

/// Closed-form exponential of a traceless skew-Hermitian 2x2 matrix:
/// `X^2 = -det(X) I`, so `exp X = cos(r) I + sin(r)/r X` with `r^2 = det X`.
fn su2_exp(x: &CMat) -> CMat {
    let r2 = x.det().re.max(0.0);
    let r = r2.sqrt();
    let (c, s) = if r < 1e-4 {
        (1.0 - r2 / 2.0 + r2 * r2 / 24.0, 1.0 - r2 / 6.0 + r2 * r2 / 120.0)
    } else {
        (r.cos(), r.sin() / r)
    };
    let a = x.as_slice();
    let cc = C64::new(c, 0.0);
    CMat::from_row_major(2, &[cc + a[0] * s, a[1] * s, a[2] * s, cc + a[3] * s])
}

/// Running left product `g_k ... g_1` with periodic polar retraction.
pub struct ProductAccumulator<'a> {
    ctx: &'a GroupContext,
    acc: CMat,
    scratch: CMat,
    count: usize,
}

impl<'a> ProductAccumulator<'a> {
    pub fn new(ctx: &'a GroupContext) -> Self {
        Self::starting_at(ctx, ctx.identity())
    }

    pub fn starting_at(ctx: &'a GroupContext, g: CMat) -> Self {
        let scratch = CMat::zeros(ctx.matrix_dim());
        ProductAccumulator { ctx, acc: g, scratch, count: 0 }
    }

    pub fn left_mul(&mut self, g: &CMat) {
        CMat::mul_into(g, &self.acc, &mut self.scratch);
        std::mem::swap(&mut self.acc, &mut self.scratch);
        self.tick();
    }

    pub fn right_mul(&mut self, g: &CMat) {
        CMat::mul_into(&self.acc, g, &mut self.scratch);
        std::mem::swap(&mut self.acc, &mut self.scratch);
        self.tick();
    }

    fn tick(&mut self) {
        self.count += 1;
        if self.count >= self.ctx.retract_every() {
            self.count = 0;
            if let Ok(u) = self.ctx.retract(&self.acc) {
                self.acc = u;
            }
        }
    }

    pub fn current(&self) -> &CMat {
        &self.acc
    }

    pub fn finish(self) -> CMat {
        self.acc
    }
}

/// Convenience for tests and examples: `c * i * I`.
pub fn imag_scalar(n: usize, c: f64) -> CMat {
    CMat::scalar(n, I * c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    fn all_kinds() -> Vec<GroupKind> {
        vec![
            GroupKind::U1,
            GroupKind::SU2,
            GroupKind::SUN(3),
            GroupKind::SUN(4),
            GroupKind::UN(2),
            GroupKind::UN(3),
        ]
    }

    #[test]
    fn parse_and_display_round_trip() {
        for k in all_kinds() {
            assert_eq!(k.to_string().parse::<GroupKind>().unwrap(), k);
        }
        assert!("so3".parse::<GroupKind>().is_err());
        assert!("sun:x".parse::<GroupKind>().is_err());
    }

    #[test]
    fn large_groups_rejected() {
        assert!(GroupContext::new(GroupKind::SUN(9)).is_err());
        assert!(GroupContext::new(GroupKind::UN(0)).is_err());
        assert!(GroupContext::new(GroupKind::SUN(8)).is_ok());
    }

    #[test]
    fn basis_orthonormal_and_in_algebra() {
        for k in all_kinds() {
            let g = GroupContext::new(k).unwrap();
            let n = g.matrix_dim();
            let expected = if k.is_special() { n * n - 1 } else { n * n };
            assert_eq!(g.algebra_dim(), expected);
            for (i, a) in g.basis().iter().enumerate() {
                assert!(g.algebra_defect(a) < 1e-14);
                for (j, b) in g.basis().iter().enumerate() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((inner(a, b) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn exp_examples() {
        let u1 = GroupContext::new(GroupKind::U1).unwrap();
        let e = u1.exp_map(&imag_scalar(1, std::f64::consts::PI));
        assert!((e.get(0, 0) - C64::new(-1.0, 0.0)).norm() < 1e-15);
        let su2 = GroupContext::new(GroupKind::SU2).unwrap();
        let x = CMat::diag(&[I * (std::f64::consts::PI / 2.0), -I * (std::f64::consts::PI / 2.0)]);
        let e = su2.exp_map(&x);
        assert!(e.dist_max(&CMat::diag(&[I, -I])) < 1e-15);
        assert!(su2.exp_map(&su2.zero()).dist_max(&su2.identity()) == 0.0);
    }

    #[test]
    fn su2_closed_form_matches_pade() {
        let g = GroupContext::new(GroupKind::SU2).unwrap();
        let mut rng = SmallRng::seed_from_u64(3);
        for scale in [1e-9, 1e-5, 1e-3, 0.3, 2.0, 9.0] {
            let x = g.sample_algebra_gaussian(scale * scale, &mut rng);
            assert!(g.exp_map(&x).dist_max(&x.expm()) < 1e-13);
        }
    }

    #[test]
    fn retract_examples() {
        let u1 = GroupContext::new(GroupKind::U1).unwrap();
        let r = u1.retract(&CMat::scalar(1, C64::new(2.0, 0.0))).unwrap();
        assert!((r.get(0, 0) - ONE).norm() < 1e-15);
        assert!(u1.retract(&CMat::zeros(1)).is_err());
        let su3 = GroupContext::new(GroupKind::SUN(3)).unwrap();
        let mut rng = SmallRng::seed_from_u64(5);
        let xi = su3.sample_algebra_gaussian(1.0, &mut rng);
        let m = &su3.identity() + &xi.scale_re(1e-8);
        let r = su3.retract(&m).unwrap();
        assert!(r.dist_max(&su3.exp_map(&xi.scale_re(1e-8))) < 1e-7);
        let g = su3.exp_map(&xi);
        assert!(su3.retract(&g).unwrap().dist_max(&g) < 1e-12);
    }

    #[test]
    fn heat_mean_examples() {
        let su2 = GroupContext::new(GroupKind::SU2).unwrap();
        let m = su2.heat_mean(1.0);
        assert!(m.dist_max(&CMat::scalar(2, C64::new((-0.75f64).exp(), 0.0))) < 1e-14);
        let u1 = GroupContext::new(GroupKind::U1).unwrap();
        assert!((u1.heat_mean(2.0).get(0, 0).re - (-1.0f64).exp()).abs() < 1e-15);
        assert!(su2.heat_mean(0.0).dist_max(&su2.identity()) < 1e-15);
    }

    #[test]
    fn brownian_zero_time_is_identity() {
        let g = GroupContext::new(GroupKind::SU2).unwrap();
        let mut rng = SmallRng::seed_from_u64(1);
        assert_eq!(g.brownian_sample(0.0, 10, &mut rng), g.identity());
    }

    #[test]
    fn accumulator_retraction_keeps_group() {
        let g = GroupContext::new(GroupKind::SUN(3)).unwrap().with_retract_every(16);
        let mut rng = SmallRng::seed_from_u64(9);
        let mut acc = ProductAccumulator::new(&g);
        for _ in 0..5000 {
            let x = g.sample_algebra_gaussian(0.1, &mut rng);
            acc.left_mul(&g.exp_map(&x));
        }
        assert!(g.group_defect(acc.current()) < 1e-12);
    }

    #[test]
    fn ad_matrix_is_orthogonal() {
        let g = GroupContext::new(GroupKind::SUN(3)).unwrap();
        let mut rng = SmallRng::seed_from_u64(2);
        let u = g.exp_map(&g.sample_algebra_gaussian(1.0, &mut rng));
        let a = g.ad_matrix(&u);
        let m = g.algebra_dim();
        for i in 0..m {
            for j in 0..m {
                let d: f64 = (0..m).map(|k| a[k * m + i] * a[k * m + j]).sum();
                assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
