//! Deterministic laboratory for smooth connections on the plane.
//!
//! Connections are closed-form test fields (or closures built from them), and
//! every identity is checked numerically: parallel transport is integrated by
//! classical Runge-Kutta, curvature comes from analytic jets when available and
//! from five-point differences otherwise, and area integrals use composite
//! Gauss-Legendre rules.

use crate::error::{Error, Result};
use crate::lie::inner;
use crate::linalg::{CMat, C64};
use crate::stats::{fit_loglog, SlopeFit};
use gauss_quad::GaussLegendre;
use serde::Serialize;
use std::f64::consts::PI;
use std::num::NonZeroUsize;
use std::sync::{Arc, OnceLock};

pub type Point = [f64; 2];

/// Default number of Runge-Kutta steps per path piece.
pub const DEFAULT_STEPS: usize = 800;
/// Relative step for five-point differences.
pub const FD_STEP: f64 = 1e-3;

fn gl_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(16).expect("nonzero")).as_node_weight_pairs().to_vec()
    })
}

/// Composite 16-point Gauss-Legendre quadrature of a scalar integrand.
pub fn quad(a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let w = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * w;
        for &(x, wt) in gl_rule() {
            s += wt * 0.5 * w * f(mid + 0.5 * w * x);
        }
    }
    s
}

/// Matrix-valued version of [`quad`].
pub fn quad_mat(a: f64, b: f64, panels: usize, dim: usize, mut f: impl FnMut(f64) -> CMat) -> CMat {
    let w = (b - a) / panels as f64;
    let mut s = CMat::zeros(dim);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * w;
        for &(x, wt) in gl_rule() {
            s.axpy(wt * 0.5 * w, &f(mid + 0.5 * w * x));
        }
    }
    s
}

/// Five-point central difference of `f` at 0 with step `h`.
fn d5(h: f64, f: impl Fn(f64) -> CMat) -> CMat {
    let mut out = f(-2.0 * h);
    out.axpy(-8.0, &f(-h));
    out.axpy(8.0, &f(h));
    out.axpy(-1.0, &f(2.0 * h));
    out.scale_re(1.0 / (12.0 * h))
}

fn fd_step(p: Point) -> f64 {
    FD_STEP * 1f64.max(p[0].abs()).max(p[1].abs())
}

/// `max |a - b| / max(max |b|, 1e-12)`.
fn rel_err(a: &CMat, b: &CMat) -> f64 {
    a.dist_max(b) / b.max_abs().max(1e-12)
}

/// Fixed probe points in `[-1, 1]^2`.
pub fn probe_points() -> Vec<Point> {
    vec![[0.3, 0.7], [-0.4, 0.25], [0.8, -0.5], [0.15, 0.1], [-0.6, -0.9], [0.55, 0.35]]
}

/// Scalar test profile with its gradient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Profile {
    Const(f64),
    /// `c x^px y^py`
    Monomial { c: f64, px: i32, py: i32 },
    /// `amp sin(kx x + ky y + phase)`
    Wave { amp: f64, kx: f64, ky: f64, phase: f64 },
}

impl Profile {
    /// `[value, d/dx, d/dy]`.
    pub fn jet(&self, x: f64, y: f64) -> [f64; 3] {
        match *self {
            Profile::Const(c) => [c, 0.0, 0.0],
            Profile::Monomial { c, px, py } => {
                let dx = if px == 0 { 0.0 } else { c * px as f64 * x.powi(px - 1) * y.powi(py) };
                let dy = if py == 0 { 0.0 } else { c * py as f64 * x.powi(px) * y.powi(py - 1) };
                [c * x.powi(px) * y.powi(py), dx, dy]
            }
            Profile::Wave { amp, kx, ky, phase } => {
                let a = kx * x + ky * y + phase;
                let c = amp * a.cos();
                [amp * a.sin(), kx * c, ky * c]
            }
        }
    }
}

/// `sum_k profile_k * element_k`.
pub type Terms = Vec<(Profile, CMat)>;

fn eval_terms(dim: usize, terms: &Terms, x: f64, y: f64) -> [CMat; 3] {
    let mut out = [CMat::zeros(dim), CMat::zeros(dim), CMat::zeros(dim)];
    for (p, m) in terms {
        let j = p.jet(x, y);
        for (o, c) in out.iter_mut().zip(j) {
            if c != 0.0 {
                o.axpy(c, m);
            }
        }
    }
    out
}

type Comps = Arc<dyn Fn(f64, f64) -> [CMat; 2] + Send + Sync>;
type Jets = Arc<dyn Fn(f64, f64) -> [[CMat; 3]; 2] + Send + Sync>;
type MatField = Arc<dyn Fn(f64, f64) -> CMat + Send + Sync>;

/// A connection one-form `A = A_1 dx + A_2 dy` with skew-Hermitian components.
#[derive(Clone)]
pub struct SmoothConnection {
    dim: usize,
    comps: Comps,
    jets: Option<Jets>,
    curvature: Option<MatField>,
    axial: bool,
}

impl std::fmt::Debug for SmoothConnection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothConnection")
            .field("dim", &self.dim)
            .field("analytic_jets", &self.jets.is_some())
            .field("axial", &self.axial)
            .field("at_origin", &self.components([0.0, 0.0]))
            .finish()
    }
}

impl SmoothConnection {
    pub fn zero(dim: usize) -> Self {
        Self::from_terms(dim, vec![], vec![])
    }

    /// Closed-form components; derivatives are exact.
    pub fn from_terms(dim: usize, a1: Terms, a2: Terms) -> Self {
        let (t1, t2) = (Arc::new(a1), Arc::new(a2));
        let (u1, u2) = (t1.clone(), t2.clone());
        let comps: Comps = Arc::new(move |x, y| {
            let [a, ..] = eval_terms(dim, &u1, x, y);
            let [b, ..] = eval_terms(dim, &u2, x, y);
            [a, b]
        });
        let jets: Jets = Arc::new(move |x, y| [eval_terms(dim, &t1, x, y), eval_terms(dim, &t2, x, y)]);
        SmoothConnection { dim, comps, jets: Some(jets), curvature: None, axial: false }
    }

    /// Arbitrary components; curvature falls back to finite differences.
    pub fn from_fn(dim: usize, f: impl Fn(f64, f64) -> [CMat; 2] + Send + Sync + 'static) -> Self {
        SmoothConnection { dim, comps: Arc::new(f), jets: None, curvature: None, axial: false }
    }

    /// Marks the connection as axial (`A_2 = 0`, `A_1(x, 0) = 0`) after checking the probes.
    pub fn mark_axial(mut self) -> Result<Self> {
        let d = self.axial_defect();
        if d > 1e-12 {
            return Err(Error::InvalidArgument(format!("connection is not axial (defect {d:.3e})")));
        }
        self.axial = true;
        Ok(self)
    }

    pub fn is_axial(&self) -> bool {
        self.axial
    }

    /// `max |A_1(x, 0)|, |A_2(x, y)|` over the probes.
    pub fn axial_defect(&self) -> f64 {
        probe_points()
            .into_iter()
            .map(|[x, y]| (self.comps)(x, 0.0)[0].max_abs().max((self.comps)(x, y)[1].max_abs()))
            .fold(0.0, f64::max)
    }

    /// Largest `A_2` over the probes.
    fn dy_defect(&self) -> f64 {
        probe_points().into_iter().map(|[x, y]| (self.comps)(x, y)[1].max_abs()).fold(0.0, f64::max)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self, p: Point) -> [CMat; 2] {
        (self.comps)(p[0], p[1])
    }

    /// `A<v>` at `p`.
    pub fn pair(&self, p: Point, v: Point) -> CMat {
        let [a1, a2] = self.components(p);
        let mut out = a1.scale_re(v[0]);
        out.axpy(v[1], &a2);
        out
    }

    /// Partial derivatives `[[d_x A_1, d_y A_1], [d_x A_2, d_y A_2]]`.
    pub fn partials(&self, p: Point) -> [[CMat; 2]; 2] {
        if let Some(j) = &self.jets {
            let [[_, a1x, a1y], [_, a2x, a2y]] = j(p[0], p[1]);
            return [[a1x, a1y], [a2x, a2y]];
        }
        let h = fd_step(p);
        let c = &self.comps;
        let dx = |i: usize| d5(h, |s| c(p[0] + s, p[1])[i].clone());
        let dy = |i: usize| d5(h, |s| c(p[0], p[1] + s)[i].clone());
        [[dx(0), dy(0)], [dx(1), dy(1)]]
    }

    /// `F(d_x, d_y) = d_x A_2 - d_y A_1 + [A_1, A_2]`.
    pub fn curvature(&self, p: Point) -> CMat {
        if let Some(f) = &self.curvature {
            return f(p[0], p[1]);
        }
        let [[_, a1y], [a2x, _]] = self.partials(p);
        let [a1, a2] = self.components(p);
        &(&a2x - &a1y) + &a1.commutator(&a2)
    }

    /// `F(u, w)` at `p`.
    pub fn curvature_on(&self, p: Point, u: Point, w: Point) -> CMat {
        self.curvature(p).scale_re(u[0] * w[1] - u[1] * w[0])
    }

    /// `self + s * other`.
    pub fn add(&self, other: &SmoothConnection, s: f64) -> SmoothConnection {
        let (a, b) = (self.comps.clone(), other.comps.clone());
        let comps: Comps = Arc::new(move |x, y| {
            let [mut p, mut q] = a(x, y);
            let [u, v] = b(x, y);
            p.axpy(s, &u);
            q.axpy(s, &v);
            [p, q]
        });
        let jets = match (&self.jets, &other.jets) {
            (Some(a), Some(b)) => {
                let (a, b) = (a.clone(), b.clone());
                let j: Jets = Arc::new(move |x, y| {
                    let mut l = a(x, y);
                    let r = b(x, y);
                    for (li, ri) in l.iter_mut().zip(r.iter()) {
                        for (u, v) in li.iter_mut().zip(ri.iter()) {
                            u.axpy(s, v);
                        }
                    }
                    l
                });
                Some(j)
            }
            _ => None,
        };
        SmoothConnection { dim: self.dim, comps, jets, curvature: None, axial: false }
    }

    /// Pullback under the linear map `p -> m p`: `(phi^* A)_p<v> = A_{m p}<m v>`.
    pub fn pullback_linear(&self, m: [[f64; 2]; 2]) -> SmoothConnection {
        let apply = move |p: Point| [m[0][0] * p[0] + m[0][1] * p[1], m[1][0] * p[0] + m[1][1] * p[1]];
        let mix = move |c: &[CMat; 2], j: usize| {
            let mut out = c[0].scale_re(m[0][j]);
            out.axpy(m[1][j], &c[1]);
            out
        };
        let a = self.comps.clone();
        let comps: Comps = Arc::new(move |x, y| {
            let q = apply([x, y]);
            let c = a(q[0], q[1]);
            [mix(&c, 0), mix(&c, 1)]
        });
        let jets = self.jets.clone().map(|jf| {
            let j: Jets = Arc::new(move |x, y| {
                let q = apply([x, y]);
                let [[a1, a1x, a1y], [a2, a2x, a2y]] = jf(q[0], q[1]);
                // d/dx_k (A_i o phi) = sum_l (d_l A_i) m_lk
                let chain = |dx: &CMat, dy: &CMat, k: usize| {
                    let mut o = dx.scale_re(m[0][k]);
                    o.axpy(m[1][k], dy);
                    o
                };
                let d1 = [chain(&a1x, &a1y, 0), chain(&a1x, &a1y, 1)];
                let d2 = [chain(&a2x, &a2y, 0), chain(&a2x, &a2y, 1)];
                let comp = |j: usize, v1: &CMat, v2: &CMat| {
                    let mut o = v1.scale_re(m[0][j]);
                    o.axpy(m[1][j], v2);
                    o
                };
                [
                    [comp(0, &a1, &a2), comp(0, &d1[0], &d2[0]), comp(0, &d1[1], &d2[1])],
                    [comp(1, &a1, &a2), comp(1, &d1[0], &d2[0]), comp(1, &d1[1], &d2[1])],
                ]
            });
            j
        });
        SmoothConnection { dim: self.dim, comps, jets, curvature: None, axial: false }
    }
}

/// A curvature density `f`, with `F = f dx ^ dy`.
#[derive(Clone)]
pub struct CurvatureField {
    dim: usize,
    f: MatField,
}

impl CurvatureField {
    pub fn from_terms(dim: usize, terms: Terms) -> Self {
        Self::from_fn(dim, move |x, y| eval_terms(dim, &terms, x, y)[0].clone())
    }

    pub fn from_fn(dim: usize, f: impl Fn(f64, f64) -> CMat + Send + Sync + 'static) -> Self {
        CurvatureField { dim, f: Arc::new(f) }
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_terms(dim, vec![])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, p: Point) -> CMat {
        (self.f)(p[0], p[1])
    }
}

/// Axial connection `A dx` with `A(x, y) = -int_0^y f(x, y') dy'`.
pub fn axial_from_curvature(f: &CurvatureField) -> SmoothConnection {
    let dim = f.dim;
    let (ff, fc) = (f.f.clone(), f.f.clone());
    let comps: Comps = Arc::new(move |x, y| {
        let a = if y == 0.0 { CMat::zeros(dim) } else { quad_mat(0.0, y, 2, dim, |s| ff(x, s)).scale_re(-1.0) };
        [a, CMat::zeros(dim)]
    });
    SmoothConnection { dim, comps, jets: None, curvature: Some(fc), axial: true }
}

/// `max |-d_y A_1 - f|` over the probes, by five-point differences of `A_1`.
pub fn axial_roundtrip_residual(a: &SmoothConnection, f: &CurvatureField) -> f64 {
    probe_points()
        .into_iter()
        .map(|p| {
            let dy = d5(fd_step(p), |s| a.components([p[0], p[1] + s])[0].clone());
            (-&dy).dist_max(&f.eval(p))
        })
        .fold(0.0, f64::max)
}

/// `t -> (position, velocity)` on `[0, 1]`.
pub type Curve = Arc<dyn Fn(f64) -> (Point, Point) + Send + Sync>;

/// Piecewise smooth path; piece `k` covers global times `[k/n, (k+1)/n]`.
#[derive(Clone)]
pub struct SmoothPath {
    pieces: Vec<Curve>,
}

impl std::fmt::Debug for SmoothPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SmoothPath").field("pieces", &self.pieces.len()).field("start", &self.start()).field("end", &self.end()).finish()
    }
}

impl SmoothPath {
    pub fn from_fn(c: impl Fn(f64) -> (Point, Point) + Send + Sync + 'static) -> Self {
        SmoothPath { pieces: vec![Arc::new(c)] }
    }

    pub fn segment(a: Point, b: Point) -> Self {
        let v = [b[0] - a[0], b[1] - a[1]];
        Self::from_fn(move |t| ([a[0] + t * v[0], a[1] + t * v[1]], v))
    }

    pub fn polyline(pts: &[Point]) -> Self {
        let mut out = SmoothPath { pieces: vec![] };
        for w in pts.windows(2) {
            out.pieces.extend(Self::segment(w[0], w[1]).pieces);
        }
        out
    }

    /// Counterclockwise boundary of `[x0, x1] x [y0, y1]` starting at `(x0, y0)`.
    pub fn rect_boundary(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self::polyline(&[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]])
    }

    pub fn pieces(&self) -> &[Curve] {
        &self.pieces
    }

    pub fn then(mut self, other: &SmoothPath) -> Self {
        self.pieces.extend(other.pieces.iter().cloned());
        self
    }

    pub fn reversed(&self) -> Self {
        let pieces = self
            .pieces
            .iter()
            .rev()
            .map(|c| {
                let c = c.clone();
                let r: Curve = Arc::new(move |t| {
                    let (p, v) = c(1.0 - t);
                    (p, [-v[0], -v[1]])
                });
                r
            })
            .collect();
        SmoothPath { pieces }
    }

    /// Image under `p -> m p + b`.
    pub fn mapped(&self, m: [[f64; 2]; 2], b: Point) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|c| {
                let c = c.clone();
                let r: Curve = Arc::new(move |t| {
                    let (p, v) = c(t);
                    let ap = |q: Point| [m[0][0] * q[0] + m[0][1] * q[1], m[1][0] * q[0] + m[1][1] * q[1]];
                    let q = ap(p);
                    ([q[0] + b[0], q[1] + b[1]], ap(v))
                });
                r
            })
            .collect();
        SmoothPath { pieces }
    }

    pub fn scaled(&self, eps: f64) -> Self {
        self.mapped([[eps, 0.0], [0.0, eps]], [0.0, 0.0])
    }

    /// Mirror image under `(x, y) -> (-x, y)`.
    pub fn reflected(&self) -> Self {
        self.mapped([[-1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    }

    pub fn point(&self, t: f64) -> Point {
        let n = self.pieces.len();
        let k = ((t * n as f64).floor() as usize).min(n - 1);
        (self.pieces[k])(t * n as f64 - k as f64).0
    }

    pub fn start(&self) -> Point {
        (self.pieces[0])(0.0).0
    }

    pub fn end(&self) -> Point {
        (self.pieces[self.pieces.len() - 1])(1.0).0
    }
}

/// Classical fourth-order Runge-Kutta for a system of matrices on `[t0, t1]`.
fn rk4(y: &mut [CMat], t0: f64, t1: f64, steps: usize, rhs: &dyn Fn(f64, &[CMat]) -> Vec<CMat>) {
    let h = (t1 - t0) / steps as f64;
    let shifted = |y: &[CMat], k: &[CMat], c: f64| -> Vec<CMat> {
        y.iter()
            .zip(k)
            .map(|(a, b)| {
                let mut o = a.clone();
                o.axpy(c, b);
                o
            })
            .collect()
    };
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        let k1 = rhs(t, y);
        let k2 = rhs(t + 0.5 * h, &shifted(y, &k1, 0.5 * h));
        let k3 = rhs(t + 0.5 * h, &shifted(y, &k2, 0.5 * h));
        let k4 = rhs(t + h, &shifted(y, &k3, h));
        for (i, yi) in y.iter_mut().enumerate() {
            yi.axpy(h / 6.0, &k1[i]);
            yi.axpy(h / 3.0, &k2[i]);
            yi.axpy(h / 3.0, &k3[i]);
            yi.axpy(h / 6.0, &k4[i]);
        }
    }
}

/// Integrates `P' = -A<c'> P` together with `J_i' = P^{-1} X_i P` over local
/// times `[0, upto]` of one piece. `extra(t, pos, vel)` returns the `X_i`.
fn transport_piece(
    a: &SmoothConnection,
    c: &Curve,
    upto: f64,
    steps: usize,
    y: &mut [CMat],
    extra: &dyn Fn(f64, Point, Point) -> Vec<CMat>,
) {
    let rhs = |t: f64, y: &[CMat]| -> Vec<CMat> {
        let (p, v) = c(t);
        let mut out = Vec::with_capacity(y.len());
        out.push(-&(&a.pair(p, v) * &y[0]));
        if y.len() > 1 {
            let pinv = y[0].adjoint();
            for x in extra(t, p, v) {
                out.push(&(&pinv * &x) * &y[0]);
            }
        }
        out
    };
    rk4(y, 0.0, upto, steps, &rhs);
}

fn no_extra(_: f64, _: Point, _: Point) -> Vec<CMat> {
    vec![]
}

/// Parallel transport `//_1` solving `d//_t/dt + A<l'(t)> //_t = 0`, `//_0 = I`.
pub fn ode_transport(a: &SmoothConnection, path: &SmoothPath, steps: usize) -> CMat {
    ode_transport_to(a, path, 1.0, steps)
}

/// Transport along the restriction of `path` to global times `[0, t]`.
pub fn ode_transport_to(a: &SmoothConnection, path: &SmoothPath, t: f64, steps: usize) -> CMat {
    let n = path.pieces.len();
    let mut y = [CMat::identity(a.dim)];
    for (k, c) in path.pieces.iter().enumerate() {
        let local = (t * n as f64 - k as f64).clamp(0.0, 1.0);
        if local <= 0.0 {
            break;
        }
        transport_piece(a, c, local, steps, &mut y, &no_extra);
    }
    let [p] = y;
    p
}

/// Transport together with `J = int Ad_{//_t^{-1}} X(t) dt` for one integrand
/// per entry of `extra`; the integrand receives `(piece, local time, pos, vel)`.
pub fn transport_with_integrals(
    a: &SmoothConnection,
    path: &SmoothPath,
    steps: usize,
    count: usize,
    extra: &dyn Fn(usize, f64, Point, Point) -> Vec<CMat>,
) -> (CMat, Vec<CMat>) {
    let mut y = vec![CMat::identity(a.dim)];
    y.extend((0..count).map(|_| CMat::zeros(a.dim)));
    for (k, c) in path.pieces.iter().enumerate() {
        transport_piece(a, c, 1.0, steps, &mut y, &|t, p, v| extra(k, t, p, v));
    }
    let p = y.remove(0);
    (p, y)
}

/// `max |g* g - I|`.
pub fn unitarity_defect(g: &CMat) -> f64 {
    (&g.adjoint() * g).dist_max(&CMat::identity(g.n()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceOrder {
    /// `|T(n) - T(2n)|` and `|T(2n) - T(4n)|`.
    pub errors: [f64; 2],
    pub order: f64,
}

/// Observed order of the transport integrator by step halving.
pub fn transport_order(a: &SmoothConnection, path: &SmoothPath, steps: usize) -> ConvergenceOrder {
    let t: Vec<CMat> = [steps, 2 * steps, 4 * steps].iter().map(|&s| ode_transport(a, path, s)).collect();
    let e = [t[0].dist_max(&t[1]), t[1].dist_max(&t[2])];
    ConvergenceOrder { errors: e, order: (e[0] / e[1]).log2() }
}

type GaugeFn = Arc<dyn Fn(f64, f64) -> [CMat; 3] + Send + Sync>;

/// A gauge function `g: R^2 -> K` with its partial derivatives.
#[derive(Clone)]
pub struct Gauge {
    dim: usize,
    g: GaugeFn,
}

impl Gauge {
    pub fn identity(dim: usize) -> Self {
        Self::exp_product(dim, vec![])
    }

    /// `g = exp(phi_1 xi_1) ... exp(phi_n xi_n)`.
    pub fn exp_product(dim: usize, factors: Vec<(Profile, CMat)>) -> Self {
        let g: GaugeFn = Arc::new(move |x, y| {
            let mut e = Vec::with_capacity(factors.len());
            let mut de = Vec::with_capacity(factors.len());
            for (p, xi) in &factors {
                let [v, vx, vy] = p.jet(x, y);
                let ex = xi.scale_re(v).expm();
                let d = &xi.scale_re(1.0) * &ex;
                de.push([d.scale_re(vx), d.scale_re(vy)]);
                e.push(ex);
            }
            let mut g = CMat::identity(dim);
            e.iter().for_each(|m| g = &g * m);
            let mut dg = [CMat::zeros(dim), CMat::zeros(dim)];
            for k in 0..e.len() {
                for (dir, out) in dg.iter_mut().enumerate() {
                    let mut term = CMat::identity(dim);
                    for (j, m) in e.iter().enumerate() {
                        term = if j == k { &term * &de[k][dir] } else { &term * m };
                    }
                    *out += &term;
                }
            }
            let [gx, gy] = dg;
            [g, gx, gy]
        });
        Gauge { dim, g }
    }

    pub fn from_fn(dim: usize, g: impl Fn(f64, f64) -> [CMat; 3] + Send + Sync + 'static) -> Self {
        Gauge { dim, g: Arc::new(g) }
    }

    pub fn value(&self, p: Point) -> CMat {
        let [g, ..] = (self.g)(p[0], p[1]);
        g
    }

    /// `[g, d_x g, d_y g]`.
    pub fn jet(&self, p: Point) -> [CMat; 3] {
        (self.g)(p[0], p[1])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// `A^g = g^{-1} A g + g^{-1} dg`.
pub fn gauge_transform(a: &SmoothConnection, g: &Gauge) -> SmoothConnection {
    let (ac, gf) = (a.comps.clone(), g.g.clone());
    SmoothConnection::from_fn(a.dim, move |x, y| {
        let [g, gx, gy] = gf(x, y);
        let gi = g.adjoint();
        let [a1, a2] = ac(x, y);
        let f = |ai: &CMat, di: &CMat| &(&(&gi * ai) * &g) + &(&gi * di);
        [f(&a1, &gx), f(&a2, &gy)]
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaugeCheck {
    /// `|//^{A^g}(l) - g(l_1)^{-1} //^A(l) g(l_0)|`
    pub transport_residual: f64,
    /// `max_probes |F^{A^g} - Ad_{g^{-1}} F^A|`
    pub curvature_residual: f64,
}

/// Checks how transport and curvature change under a gauge transformation.
pub fn gauge_identities(a: &SmoothConnection, g: &Gauge, path: &SmoothPath, steps: usize) -> GaugeCheck {
    let ag = gauge_transform(a, g);
    let lhs = ode_transport(&ag, path, steps);
    let rhs = &(&g.value(path.end()).adjoint() * &ode_transport(a, path, steps)) * &g.value(path.start());
    let curvature_residual = probe_points()
        .into_iter()
        .map(|p| {
            let gp = g.value(p);
            ag.curvature(p).dist_max(&(&(&gp.adjoint() * &a.curvature(p)) * &gp))
        })
        .fold(0.0, f64::max);
    GaugeCheck { transport_residual: lhs.dist_max(&rhs), curvature_residual }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonCheck {
    pub k: CMat,
    /// `|//^B - //^A k|`
    pub residual: f64,
}

/// Integrates `k' + Ad_{//_t^{-1}}(B - A)<l'> k = 0`, `k_0 = I`, and compares
/// `//^B` with `//^A k`.
pub fn connection_comparison(
    a: &SmoothConnection,
    b: &SmoothConnection,
    path: &SmoothPath,
    steps: usize,
) -> ComparisonCheck {
    let dim = a.dim;
    let mut y = vec![CMat::identity(dim), CMat::identity(dim), CMat::identity(dim)];
    for c in &path.pieces {
        let rhs = |t: f64, y: &[CMat]| -> Vec<CMat> {
            let (p, v) = c(t);
            let (ma, mb) = (a.pair(p, v), b.pair(p, v));
            let diff = &mb - &ma;
            let ad = &(&y[0].adjoint() * &diff) * &y[0];
            vec![-&(&ma * &y[0]), -&(&ad * &y[1]), -&(&mb * &y[2])]
        };
        rk4(&mut y, 0.0, 1.0, steps, &rhs);
    }
    let residual = y[2].dist_max(&(&y[0] * &y[1]));
    ComparisonCheck { k: y[1].clone(), residual }
}

/// An analytic derivative against its finite-difference counterpart.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivCheck {
    pub analytic: CMat,
    pub numeric: CMat,
    pub rel_err: f64,
}

impl DerivCheck {
    fn new(analytic: CMat, numeric: CMat) -> Self {
        let rel_err = rel_err(&analytic, &numeric);
        DerivCheck { analytic, numeric, rel_err }
    }
}

/// Step of the central difference in the connection direction.
pub const CONNECTION_FD_STEP: f64 = 1e-5;

/// `d/ds //(A + s eta) = -// int Ad_{//_t^{-1}} eta<l'> dt` against a central difference.
pub fn connection_derivative(
    a: &SmoothConnection,
    eta: &SmoothConnection,
    path: &SmoothPath,
    steps: usize,
) -> DerivCheck {
    let (p, j) = transport_with_integrals(a, path, steps, 1, &|_, _, pos, v| vec![eta.pair(pos, v)]);
    let analytic = -&(&p * &j[0]);
    let s = CONNECTION_FD_STEP;
    let up = ode_transport(&a.add(eta, s), path, steps);
    let dn = ode_transport(&a.add(eta, -s), path, steps);
    DerivCheck::new(analytic, (&up - &dn).scale_re(0.5 / s))
}

type FamilyFn = Arc<dyn Fn(f64, f64) -> [Point; 3] + Send + Sync>;

/// A one-parameter family of smooth paths `(s, t) -> l_s(t)` with both partials.
#[derive(Clone)]
pub struct PathFamily {
    f: FamilyFn,
}

impl PathFamily {
    /// `f(s, t)` returns `[l_s(t), d_t l_s(t), d_s l_s(t)]`.
    pub fn new(f: impl Fn(f64, f64) -> [Point; 3] + Send + Sync + 'static) -> Self {
        PathFamily { f: Arc::new(f) }
    }

    pub fn eval(&self, s: f64, t: f64) -> [Point; 3] {
        (self.f)(s, t)
    }

    pub fn at(&self, s: f64) -> SmoothPath {
        let f = self.f.clone();
        SmoothPath::from_fn(move |t| {
            let [p, v, _] = f(s, t);
            (p, v)
        })
    }

    /// `sigma -> l_sigma(t)` for `sigma` from 0 to `s`.
    pub fn transversal(&self, t: f64, s: f64) -> SmoothPath {
        let f = self.f.clone();
        SmoothPath::from_fn(move |u| {
            let [p, _, d] = f(u * s, t);
            (p, [s * d[0], s * d[1]])
        })
    }

    fn moves(&self, s: f64, t: f64) -> bool {
        let d = self.eval(s, t)[2];
        d[0].abs().max(d[1].abs()) > 1e-12
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathDerivative {
    /// True when the end point moves and the covariant form was used.
    pub covariant: bool,
    pub check: DerivCheck,
    /// The conjugated form, checked only when the end point moves.
    pub corollary: Option<DerivCheck>,
}

/// Step of the central difference in the family parameter.
pub const PATH_FD_STEP: f64 = 1e-4;

/// Differentiates `//_1(l_s)` in `s`. The start point must not move. With a
/// fixed end point `d/ds //_1 = //_1 int Ad_{//_t^{-1}} F(l', dl/ds) dt`; with a
/// moving end point the left side becomes `(d/ds + A<dl_s(1)/ds>) //_1`.
pub fn path_derivative(a: &SmoothConnection, fam: &PathFamily, s: f64, steps: usize) -> Result<PathDerivative> {
    if fam.moves(s, 0.0) {
        return Err(Error::InvalidArgument("the start point of the path family must be fixed".into()));
    }
    let f = fam.f.clone();
    let (p, j) = transport_with_integrals(a, &fam.at(s), steps, 1, &|_, t, pos, v| {
        vec![a.curvature_on(pos, v, f(s, t)[2])]
    });
    let analytic = &p * &j[0];
    let h = PATH_FD_STEP;
    let t = |s: f64| ode_transport(a, &fam.at(s), steps);
    let mut numeric = (&t(s + h) - &t(s - h)).scale_re(0.5 / h);
    let covariant = fam.moves(s, 1.0);
    let mut corollary = None;
    if covariant {
        let [end, _, d] = fam.eval(s, 1.0);
        numeric += &(&a.pair(end, d) * &p);
        // d/ds [E_s^{-1} //_1(l_s)] with E_s the transport along sigma -> l_sigma(1)
        let w = |u: f64| &ode_transport(a, &fam.transversal(1.0, u), steps).adjoint() * &t(u);
        let lhs = (&w(s + h) - &w(s - h)).scale_re(0.5 / h);
        let e = ode_transport(a, &fam.transversal(1.0, s), steps);
        corollary = Some(DerivCheck::new(&e.adjoint() * &analytic, lhs));
    }
    Ok(PathDerivative { covariant, check: DerivCheck::new(analytic, numeric), corollary })
}

/// Gauge fixing of `A = A_1 dx` into axial form. `g_A(x)` solves
/// `g' + A_1(x, 0) g = 0`, `g(0) = I`, and the projected connection is
/// `Ad_{g_A^{-1}}(A_1(x, y) - A_1(x, 0)) dx`.
#[derive(Clone)]
pub struct AxialProjection {
    source: SmoothConnection,
    steps: usize,
}

impl AxialProjection {
    pub fn gauge_at(&self, x: f64) -> CMat {
        if x == 0.0 {
            return CMat::identity(self.source.dim);
        }
        ode_transport(&self.source, &SmoothPath::segment([0.0, 0.0], [x, 0.0]), self.steps)
    }

    /// The gauge as a [`Gauge`], with `d_x g = -A_1(x, 0) g`.
    pub fn gauge(&self) -> Gauge {
        let me = self.clone();
        Gauge::from_fn(self.source.dim, move |x, _| {
            let g = me.gauge_at(x);
            let gx = -&(&me.source.components([x, 0.0])[0] * &g);
            [g, gx, CMat::zeros(me.source.dim)]
        })
    }

    pub fn projected(&self) -> SmoothConnection {
        let me = self.clone();
        let dim = self.source.dim;
        SmoothConnection {
            dim,
            comps: Arc::new(move |x, y| {
                let g = me.gauge_at(x);
                let a = &me.source.components([x, y])[0] - &me.source.components([x, 0.0])[0];
                [&(&g.adjoint() * &a) * &g, CMat::zeros(dim)]
            }),
            jets: None,
            curvature: None,
            axial: true,
        }
    }
}

/// Requires `A_2 = 0` at the probes.
pub fn axial_projection(a: &SmoothConnection, steps: usize) -> Result<AxialProjection> {
    let d = a.dy_defect();
    if d > 1e-12 {
        return Err(Error::InvalidArgument(format!("axial projection needs A = A_1 dx (|A_2| = {d:.3e})")));
    }
    Ok(AxialProjection { source: a.clone(), steps })
}

/// For axial `A` and `eta = eta_1 dx`, the residual of
/// `//^{[(A + eta) dx]^{g_eta}}(l) = g_eta(l_1)^{-1} //^A(l) k g_eta(l_0)`
/// where `k` compares `A` with `A + eta` along `l`.
pub fn axial_perturbation_residual(
    a: &SmoothConnection,
    eta: &SmoothConnection,
    path: &SmoothPath,
    steps: usize,
) -> Result<f64> {
    if a.axial_defect() > 1e-12 {
        return Err(Error::InvalidArgument("base connection must be axial".into()));
    }
    let proj = axial_projection(eta, steps)?;
    let lhs_conn = axial_projection(&a.add(eta, 1.0), steps)?.projected();
    let lhs = ode_transport(&lhs_conn, path, steps);
    let k = connection_comparison(a, &a.add(eta, 1.0), path, steps).k;
    let ga = proj.gauge_at(path.start()[0]);
    let gb = proj.gauge_at(path.end()[0]);
    let rhs = &(&(&gb.adjoint() * &ode_transport(a, path, steps)) * &k) * &ga;
    Ok(lhs.dist_max(&rhs))
}

/// Loop `l(t) = (w sin(pi t), h t)` bounding `Q = {0 <= x <= w sin(pi y / h)}`
/// together with the y-axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LoopShape {
    pub width: f64,
    pub height: f64,
}

impl LoopShape {
    pub fn path(&self) -> SmoothPath {
        let (w, h) = (self.width, self.height);
        SmoothPath::from_fn(move |t| ([w * (PI * t).sin(), h * t], [w * PI * (PI * t).cos(), h]))
    }

    /// `int_{eps Q} f`, or over the mirror image when `reflected`.
    pub fn area_integral(&self, f: &CurvatureField, eps: f64, reflected: bool) -> CMat {
        let (w, h) = (eps * self.width, eps * self.height);
        let sign = if reflected { -1.0 } else { 1.0 };
        quad_mat(0.0, h, 4, f.dim, |y| {
            let xm = w * (PI * y / h).sin();
            let inner = quad_mat(0.0, xm, 2, f.dim, |x| f.eval([sign * x, y]));
            inner
        })
    }
}

/// `psi(k) = tr(m k) / D`.
fn psi(m: &CMat, k: &CMat) -> C64 {
    (m * k).trace() / m.n() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpansionRow {
    pub eps: f64,
    /// `|psi(//(eps l)) - psi(I) + (d_{f(eps Q)} psi)(e)|`
    pub remainder: f64,
    /// `|psi(//(eps R l)) - psi(I) - (d_{f(eps R Q)} psi)(e)|`
    pub remainder_reflected: f64,
    /// `|int_{eps l} A dx - f(eps Q)|`
    pub green_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopExpansion {
    pub rows: Vec<ExpansionRow>,
    pub slope: Option<SlopeFit>,
    pub reflected_slope: Option<SlopeFit>,
}

/// Small-loop expansion of a class function of the holonomy of the axial
/// connection of `f`. `weight` is the matrix `m` in `psi(k) = tr(m k)/D`,
/// the identity by default.
pub fn smooth_loop_expansion(
    f: &CurvatureField,
    shape: LoopShape,
    eps: &[f64],
    weight: Option<&CMat>,
    steps: usize,
) -> LoopExpansion {
    let dim = f.dim;
    let id = CMat::identity(dim);
    let m = weight.cloned().unwrap_or_else(|| id.clone());
    let a = axial_from_curvature(f);
    let rows: Vec<ExpansionRow> = eps
        .iter()
        .map(|&e| {
            let path = shape.path().scaled(e);
            let fq = shape.area_integral(f, e, false);
            let rem = psi(&m, &ode_transport(&a, &path, steps)) - psi(&m, &id) + psi(&m, &fq);
            let path_r = path.reflected();
            let fr = shape.area_integral(f, e, true);
            let rem_r = psi(&m, &ode_transport(&a, &path_r, steps)) - psi(&m, &id) - psi(&m, &fr);
            let c = &path.pieces[0];
            let beta = quad_mat(0.0, 1.0, 8, dim, |t| {
                let (p, v) = c(t);
                a.pair(p, v)
            });
            ExpansionRow {
                eps: e,
                remainder: rem.norm(),
                remainder_reflected: rem_r.norm(),
                green_residual: beta.dist_max(&fq),
            }
        })
        .collect();
    let fit = |sel: fn(&ExpansionRow) -> f64| {
        let xs: Vec<f64> = rows.iter().map(|r| r.eps).collect();
        let ys: Vec<f64> = rows.iter().map(sel).collect();
        fit_loglog(&xs, &ys).ok()
    };
    let slope = fit(|r| r.remainder);
    let reflected_slope = fit(|r| r.remainder_reflected);
    LoopExpansion { rows, slope, reflected_slope }
}

/// Follow-the-leader homotopies contracting the plane to the origin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Homotopy {
    /// `sigma_x(t) = t x`
    Radial,
    /// Along the x-axis to `(x_1, 0)`, then vertically to `x`.
    CompleteAxial,
}


/// `u -> [sigma_x(u), d sigma_x / du, d_v sigma_x(u)]` on one piece.
type HomotopyPiece = Arc<dyn Fn(f64) -> [Point; 3] + Send + Sync>;

impl Homotopy {
    fn pieces(self, x: Point, v: Point) -> Vec<HomotopyPiece> {
        match self {
            Homotopy::Radial => vec![Arc::new(move |t| [[t * x[0], t * x[1]], x, [t * v[0], t * v[1]]])],
            Homotopy::CompleteAxial => vec![
                Arc::new(move |u| [[u * x[0], 0.0], [x[0], 0.0], [u * v[0], 0.0]]),
                Arc::new(move |u| [[x[0], u * x[1]], [0.0, x[1]], [v[0], u * v[1]]]),
            ],
        }
    }

    /// `sigma_x` as a path.
    pub fn path(self, x: Point) -> SmoothPath {
        match self {
            Homotopy::Radial => SmoothPath::segment([0.0, 0.0], x),
            Homotopy::CompleteAxial => SmoothPath::polyline(&[[0.0, 0.0], [x[0], 0.0], x]),
        }
    }
}

/// `g_A(x) = //_1^A(sigma_x)`.
pub fn homotopy_gauge(a: &SmoothConnection, h: Homotopy, x: Point, steps: usize) -> CMat {
    ode_transport(a, &h.path(x), steps)
}

/// `pi_sigma(A) = A^{g_A}` evaluated through the curvature:
/// `pi(A)<v_x> = Ad_{g_A(x)^{-1}} int Ad_{//_{1<-t}} F(sigma_x', d_v sigma_x) dt`,
/// which collapses to `int Ad_{//_t^{-1}} F(sigma_x', d_v sigma_x) dt`.
pub fn homotopy_project(a: &SmoothConnection, h: Homotopy, steps: usize) -> SmoothConnection {
    let a = a.clone();
    let dim = a.dim;
    SmoothConnection::from_fn(dim, move |x, y| {
        let e = h.pieces([x, y], [1.0, 0.0]);
        let f = h.pieces([x, y], [0.0, 1.0]);
        let mut st = [CMat::identity(dim), CMat::zeros(dim), CMat::zeros(dim)];
        for (pe, pf) in e.iter().zip(&f) {
            let pc = pe.clone();
            let curve: Curve = Arc::new(move |t| {
                let [p, v, _] = pc(t);
                (p, v)
            });
            transport_piece(&a, &curve, 1.0, steps, &mut st, &|t, p, v| {
                let (d1, d2) = (pe(t)[2], pf(t)[2]);
                let fp = a.curvature(p);
                vec![fp.scale_re(v[0] * d1[1] - v[1] * d1[0]), fp.scale_re(v[0] * d2[1] - v[1] * d2[0])]
            });
        }
        let [_, p1, p2] = st;
        [p1, p2]
    })
}

/// `A^{g_A}` at `x` from the gauge itself, with `d g_A` by five-point differences.
pub fn homotopy_project_direct(a: &SmoothConnection, h: Homotopy, x: Point, steps: usize) -> [CMat; 2] {
    let g = homotopy_gauge(a, h, x, steps);
    let gi = g.adjoint();
    let step = fd_step(x);
    let dg = [
        d5(step, |s| homotopy_gauge(a, h, [x[0] + s, x[1]], steps)),
        d5(step, |s| homotopy_gauge(a, h, [x[0], x[1] + s], steps)),
    ];
    let [a1, a2] = a.components(x);
    let f = |ai: &CMat, di: &CMat| &(&(&gi * ai) * &g) + &(&gi * di);
    [f(&a1, &dg[0]), f(&a2, &dg[1])]
}

/// `max |A<sigma_x'(t)>|` over the probes and a grid of times on each piece.
pub fn slice_residual(a: &SmoothConnection, h: Homotopy) -> f64 {
    let mut worst: f64 = 0.0;
    for x in probe_points() {
        for piece in h.pieces(x, [0.0, 0.0]) {
            for k in 0..=16 {
                let [p, v, _] = piece(k as f64 / 16.0);
                worst = worst.max(a.pair(p, v).max_abs());
            }
        }
    }
    worst
}

impl CurvatureField {
    /// `F^A(d_x, d_y)` as a curvature field.
    pub fn of(a: &SmoothConnection) -> Self {
        let a = a.clone();
        CurvatureField::from_fn(a.dim, move |x, y| a.curvature([x, y]))
    }
}

/// `A<v_x> = int_0^1 F(sigma_x'(t), d_v sigma_x(t)) dt`.
pub fn reconstruct_from_curvature(f: &CurvatureField, h: Homotopy) -> SmoothConnection {
    let f = f.clone();
    let dim = f.dim;
    SmoothConnection::from_fn(dim, move |x, y| {
        let comp = |v: Point| {
            let mut out = CMat::zeros(dim);
            for piece in h.pieces([x, y], v) {
                out += &quad_mat(0.0, 1.0, 2, dim, |t| {
                    let [p, s, d] = piece(t);
                    f.eval(p).scale_re(s[0] * d[1] - s[1] * d[0])
                });
            }
            out
        };
        [comp([1.0, 0.0]), comp([0.0, 1.0])]
    })
}

/// `max |A - B|` over the probes, both components.
pub fn connection_distance(a: &SmoothConnection, b: &SmoothConnection) -> f64 {
    probe_points()
        .into_iter()
        .map(|p| {
            let (x, y) = (a.components(p), b.components(p));
            x[0].dist_max(&y[0]).max(x[1].dist_max(&y[1]))
        })
        .fold(0.0, f64::max)
}

/// `u(x) = int_0^1 eta<sigma_x'(t)> dt`.
pub fn homotopy_potential(eta: &SmoothConnection, h: Homotopy, x: Point) -> CMat {
    let mut out = CMat::zeros(eta.dim);
    for piece in h.pieces(x, [0.0, 0.0]) {
        out += &quad_mat(0.0, 1.0, 2, eta.dim, |t| {
            let [p, v, _] = piece(t);
            eta.pair(p, v)
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectedField {
    /// `[u, A] + eta - du`, one entry per component.
    pub analytic: [CMat; 2],
    /// Central difference of `pi(A + s eta)` in `s`.
    pub numeric: [CMat; 2],
    pub rel_err: f64,
    /// Relative error of the variant with `-[u, A]`.
    pub flipped_rel_err: f64,
    /// `max_t |du<sigma_x'(t)> - eta<sigma_x'(t)>|`.
    pub reparam_residual: f64,
}

/// Derivative of the homotopy projection at a slice connection `A` in the
/// direction `eta`, at the point `x`.
pub fn projected_vector_field(
    a: &SmoothConnection,
    eta: &SmoothConnection,
    h: Homotopy,
    x: Point,
    steps: usize,
) -> Result<ProjectedField> {
    let sr = slice_residual(a, h);
    if sr > 1e-8 {
        return Err(Error::InvalidArgument(format!("connection is not in the slice (residual {sr:.3e})")));
    }
    let step = fd_step(x);
    let du_at = |p: Point, v: Point| d5(step, |s| homotopy_potential(eta, h, [p[0] + s * v[0], p[1] + s * v[1]]));
    let u = homotopy_potential(eta, h, x);
    let du = [du_at(x, [1.0, 0.0]), du_at(x, [0.0, 1.0])];
    let ac = a.components(x);
    let ec = eta.components(x);
    let build = |sign: f64| -> [CMat; 2] {
        std::array::from_fn(|i| {
            let mut o = u.commutator(&ac[i]).scale_re(sign);
            o += &ec[i];
            o.axpy(-1.0, &du[i]);
            o
        })
    };
    let analytic = build(1.0);
    let flipped = build(-1.0);
    let s = 1e-4;
    let up = homotopy_project(&a.add(eta, s), h, steps).components(x);
    let dn = homotopy_project(&a.add(eta, -s), h, steps).components(x);
    let numeric: [CMat; 2] = std::array::from_fn(|i| (&up[i] - &dn[i]).scale_re(0.5 / s));
    let scale = numeric[0].max_abs().max(numeric[1].max_abs()).max(1e-12);
    let err = |m: &[CMat; 2]| m[0].dist_max(&numeric[0]).max(m[1].dist_max(&numeric[1])) / scale;
    let mut reparam: f64 = 0.0;
    for piece in h.pieces(x, [0.0, 0.0]) {
        for k in 1..8 {
            let [p, v, _] = piece(k as f64 / 8.0);
            reparam = reparam.max(du_at(p, v).dist_max(&eta.pair(p, v)));
        }
    }
    Ok(ProjectedField {
        rel_err: err(&analytic),
        flipped_rel_err: err(&flipped),
        analytic,
        numeric,
        reparam_residual: reparam,
    })
}

/// `|//^{phi^* A}(sigma) - //^A(phi o sigma)|` for the linear map `phi = m`.
pub fn naturality_residual(a: &SmoothConnection, m: [[f64; 2]; 2], path: &SmoothPath, steps: usize) -> f64 {
    let lhs = ode_transport(&a.pullback_linear(m), path, steps);
    let rhs = ode_transport(a, &path.mapped(m, [0.0, 0.0]), steps);
    lhs.dist_max(&rhs)
}

/// Squared curvature norms `int_D |F^{phi^* A}|^2` and `int_{phi D} |F^A|^2`
/// for the shear `phi(x, y) = (x + c y, y)` and `D` the unit square.
pub fn shear_curvature_norms(a: &SmoothConnection, c: f64) -> (f64, f64) {
    let pulled = a.pullback_linear([[1.0, c], [0.0, 1.0]]);
    let sq = |m: CMat| inner(&m, &m);
    let lhs = quad(0.0, 1.0, 4, |y| quad(0.0, 1.0, 4, |x| sq(pulled.curvature([x, y]))));
    let rhs = quad(0.0, 1.0, 4, |y| quad(c * y, 1.0 + c * y, 4, |x| sq(a.curvature([x, y]))));
    (lhs, rhs)
}

/// `|(dS/dt + A<l'> S) - // d/dt(//^{-1} S)|` at global time `t` of a single-piece
/// path; `section(t)` returns `[S(t), S'(t)]`.
pub fn covariant_derivative_residual(
    a: &SmoothConnection,
    path: &SmoothPath,
    section: &dyn Fn(f64) -> [CMat; 2],
    t: f64,
    steps: usize,
) -> f64 {
    let c = &path.pieces[0];
    let [s, ds] = section(t);
    let (p, v) = c(t);
    let lhs = &ds + &(&a.pair(p, v) * &s);
    let pt = ode_transport_to(a, path, t, steps);
    let h = 1e-3;
    let d = d5(h, |e| &ode_transport_to(a, path, t + e, steps).adjoint() * &section(t + e)[0]);
    lhs.dist_max(&(&pt * &d))
}

/// Closed-form fields shared by the unit tests, the standard suite and the CLI.
/// Algebra elements are taken from the group basis cyclically, so the same
/// fixtures work for every group.
pub mod fixtures {
    use super::*;
    use crate::lie::GroupContext;

    fn xi(ctx: &GroupContext, k: usize) -> CMat {
        ctx.basis()[k % ctx.algebra_dim()].clone()
    }

    fn wave(amp: f64, kx: f64, ky: f64, phase: f64) -> Profile {
        Profile::Wave { amp, kx, ky, phase }
    }

    fn mono(c: f64, px: i32, py: i32) -> Profile {
        Profile::Monomial { c, px, py }
    }

    /// A generic connection with both components nonzero.
    pub fn connection(ctx: &GroupContext) -> SmoothConnection {
        SmoothConnection::from_terms(
            ctx.matrix_dim(),
            vec![(wave(0.9, 0.7, 0.3, 0.2), xi(ctx, 0)), (mono(0.5, 1, 1), xi(ctx, 1))],
            vec![(wave(0.6, 0.4, -0.9, 1.0), xi(ctx, 2)), (mono(0.3, 2, 0), xi(ctx, 0))],
        )
    }

    /// A perturbation direction for `connection`.
    pub fn perturbation(ctx: &GroupContext) -> SmoothConnection {
        SmoothConnection::from_terms(
            ctx.matrix_dim(),
            vec![(wave(0.4, -0.5, 0.8, 0.3), xi(ctx, 2))],
            vec![(mono(0.7, 0, 1), xi(ctx, 1)), (Profile::Const(0.2), xi(ctx, 0))],
        )
    }

    /// A connection of the form `A_1 dx` that is not axial.
    pub fn dx_connection(ctx: &GroupContext) -> SmoothConnection {
        SmoothConnection::from_terms(
            ctx.matrix_dim(),
            vec![(wave(0.8, 1.1, 0.6, 0.4), xi(ctx, 1)), (mono(0.6, 1, 0), xi(ctx, 2))],
            vec![],
        )
    }

    pub fn curvature(ctx: &GroupContext) -> CurvatureField {
        CurvatureField::from_terms(
            ctx.matrix_dim(),
            vec![
                (wave(1.2, 0.8, 0.5, 0.1), xi(ctx, 0)),
                (mono(0.9, 1, 0), xi(ctx, 1)),
                (Profile::Const(1.0), xi(ctx, 2)),
            ],
        )
    }

    /// `(-y dx + x dy) S` with polynomial `S`; lies in the radial slice.
    pub fn radial_slice_connection(ctx: &GroupContext) -> SmoothConnection {
        let s = [(0.8, 0, 0, 0), (0.5, 1, 0, 0), (0.6, 0, 2, 2), (-0.4, 1, 1, 1)];
        let a1 = s.iter().map(|&(c, px, py, k)| (mono(-c, px, py + 1), xi(ctx, k))).collect();
        let a2 = s.iter().map(|&(c, px, py, k)| (mono(c, px + 1, py), xi(ctx, k))).collect();
        SmoothConnection::from_terms(ctx.matrix_dim(), a1, a2)
    }

    /// A gauge function mixing two non-commuting directions.
    pub fn gauge(ctx: &GroupContext) -> Gauge {
        Gauge::exp_product(
            ctx.matrix_dim(),
            vec![(wave(1.1, 0.9, -0.4, 0.0), xi(ctx, 0)), (mono(0.8, 1, 1), xi(ctx, 2))],
        )
    }

    /// A curved open path.
    pub fn wiggle() -> SmoothPath {
        SmoothPath::from_fn(|t| {
            ([0.2 + 0.6 * t, -0.3 + 0.9 * t + 0.2 * (PI * t).sin()], [0.6, 0.9 + 0.2 * PI * (PI * t).cos()])
        })
    }

    /// `l_s(t) = (t, s sin(pi t))`: both end points fixed.
    pub fn bump_family() -> PathFamily {
        PathFamily::new(|s, t| {
            let b = (PI * t).sin();
            [[t, s * b], [1.0, s * PI * (PI * t).cos()], [0.0, b]]
        })
    }

    /// `l_s(t) = (t, s t^2 + 0.2 t)`: the end point moves with `s`.
    pub fn lifting_family() -> PathFamily {
        PathFamily::new(|s, t| [[t, s * t * t + 0.2 * t], [1.0, 2.0 * s * t + 0.2], [0.0, t * t]])
    }

    pub fn loop_shape() -> LoopShape {
        LoopShape { width: 0.8, height: 1.0 }
    }

    pub const LOOP_EPS: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
}

/// How a suite value is judged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
            Bound::Within(lo, hi) => (lo..=hi).contains(&v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteCheck {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub pass: bool,
}

/// Every smooth identity on the fixtures, with its tolerance. `steps` is the
/// Runge-Kutta step count per path piece.
pub fn standard_suite(ctx: &crate::lie::GroupContext, steps: usize) -> Result<Vec<SuiteCheck>> {
    use fixtures as fx;
    let dim = ctx.matrix_dim();
    let mut out = Vec::new();
    let mut push = |name: &str, value: f64, bound: Bound| {
        out.push(SuiteCheck { name: name.into(), value, bound, pass: bound.holds(value) });
    };
    let a = fx::connection(ctx);
    let eta = fx::perturbation(ctx);
    let path = fx::wiggle();
    let f = fx::curvature(ctx);
    let axial = axial_from_curvature(&f);
    push("axial_roundtrip", axial_roundtrip_residual(&axial, &f), Bound::AtMost(1e-8));
    push("axial_flag", axial.axial_defect(), Bound::AtMost(1e-12));

    let t = ode_transport(&a, &path, steps);
    push("transport_unitarity", unitarity_defect(&t), Bound::AtMost(1e-10));
    let back = ode_transport(&a, &path.reversed(), steps);
    push("transport_reversal", (&t * &back).dist_max(&CMat::identity(dim)), Bound::AtMost(1e-10));
    push("transport_order", transport_order(&a, &path, 8).order, Bound::AtLeast(3.5));

    let g = gauge_identities(&a, &fx::gauge(ctx), &path, steps);
    push("gauge_transport", g.transport_residual, Bound::AtMost(1e-7));
    push("gauge_curvature", g.curvature_residual, Bound::AtMost(1e-6));
    push("connection_comparison", connection_comparison(&a, &a.add(&eta, 1.0), &path, steps).residual, Bound::AtMost(1e-7));
    push("connection_derivative", connection_derivative(&a, &eta, &path, steps).rel_err, Bound::AtMost(1e-5));

    let d = path_derivative(&a, &fx::bump_family(), 0.4, steps)?;
    push("path_derivative_fixed_ends", d.check.rel_err, Bound::AtMost(1e-5));
    let d = path_derivative(&a, &fx::lifting_family(), 0.4, steps)?;
    push("path_derivative_moving_end", d.check.rel_err, Bound::AtMost(1e-5));
    let c = d.corollary.map(|c| c.rel_err).unwrap_or(f64::INFINITY);
    push("path_derivative_conjugated", c, Bound::AtMost(1e-5));

    let general = fx::dx_connection(ctx);
    let proj = axial_projection(&general, steps)?;
    push("axial_projection_flag", proj.projected().axial_defect(), Bound::AtMost(1e-10));
    let gt = gauge_transform(&general, &proj.gauge());
    push("axial_projection_gauge", connection_distance(&gt, &proj.projected()), Bound::AtMost(1e-10));
    push("axial_perturbation", axial_perturbation_residual(&axial, &general, &path, steps)?, Bound::AtMost(1e-7));

    let shape = fx::loop_shape();
    let weight = &CMat::identity(dim) + &ctx.basis()[0].scale_re(0.8);
    for (label, w) in [("trace", None), ("weighted", Some(&weight))] {
        let e = smooth_loop_expansion(&f, shape, &fx::LOOP_EPS, w, steps);
        let slope = |s: &Option<SlopeFit>| s.as_ref().map(|s| s.slope).unwrap_or(f64::NAN);
        push(&format!("loop_expansion_slope_{label}"), slope(&e.slope), Bound::Within(3.6, 4.4));
        push(&format!("loop_expansion_reflected_slope_{label}"), slope(&e.reflected_slope), Bound::Within(3.6, 4.4));
        let green = e.rows.iter().map(|r| r.green_residual).fold(0.0, f64::max);
        push(&format!("green_identity_{label}"), green, Bound::AtMost(1e-6));
    }

    let ca = homotopy_project(&general, Homotopy::CompleteAxial, steps);
    push("complete_axial_matches_axial_projection", connection_distance(&ca, &proj.projected()), Bound::AtMost(1e-8));
    push("complete_axial_slice", slice_residual(&homotopy_project(&a, Homotopy::CompleteAxial, steps), Homotopy::CompleteAxial), Bound::AtMost(1e-6));
    let radial = homotopy_project(&a, Homotopy::Radial, steps);
    push("radial_slice", slice_residual(&radial, Homotopy::Radial), Bound::AtMost(1e-6));
    let x = [0.45, -0.3];
    let direct = homotopy_project_direct(&a, Homotopy::Radial, x, steps);
    let via = radial.components(x);
    push("radial_projection_direct", direct[0].dist_max(&via[0]).max(direct[1].dist_max(&via[1])), Bound::AtMost(1e-6));

    let back = reconstruct_from_curvature(&CurvatureField::of(&axial), Homotopy::CompleteAxial);
    push("reconstruct_complete_axial", connection_distance(&axial, &back), Bound::AtMost(1e-6));
    let rs = fx::radial_slice_connection(ctx);
    let back = reconstruct_from_curvature(&CurvatureField::of(&rs), Homotopy::Radial);
    push("reconstruct_radial", connection_distance(&rs, &back), Bound::AtMost(1e-6));

    let pv = projected_vector_field(&rs, &eta, Homotopy::Radial, [0.5, 0.35], steps)?;
    push("projected_vector_field", pv.rel_err, Bound::AtMost(1e-4));
    push("projected_vector_field_reparametrization", pv.reparam_residual, Bound::AtMost(1e-7));

    push("shear_naturality", naturality_residual(&a, [[1.0, 0.6], [0.0, 1.0]], &path, steps), Bound::AtMost(1e-7));
    let (l, r) = shear_curvature_norms(&a, 0.6);
    push("shear_curvature_norm", (l - r).abs(), Bound::AtMost(1e-6));
    let (b0, b2) = (ctx.basis()[0].clone(), ctx.basis()[2 % ctx.algebra_dim()].clone());
    let section = move |t: f64| {
        let mut s = CMat::identity(dim).scale_re((2.0 * t).cos());
        s.axpy(t * t, &b0);
        s.axpy(0.5, &b2);
        let mut ds = CMat::identity(dim).scale_re(-2.0 * (2.0 * t).sin());
        ds.axpy(2.0 * t, &b0);
        [s, ds]
    };
    let cov = [0.2, 0.55, 0.9]
        .iter()
        .map(|&t| covariant_derivative_residual(&a, &path, &section, t, steps.max(2000)))
        .fold(0.0, f64::max);
    push("covariant_derivative", cov, Bound::AtMost(1e-7));
    Ok(out)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{GroupContext, GroupKind};

    fn su2() -> GroupContext {
        GroupContext::new(GroupKind::SU2).unwrap()
    }

    fn u1_xi() -> CMat {
        GroupContext::new(GroupKind::U1).unwrap().basis()[0].clone()
    }

    fn wave(amp: f64, kx: f64, ky: f64, phase: f64) -> Profile {
        Profile::Wave { amp, kx, ky, phase }
    }

    fn mono(c: f64, px: i32, py: i32) -> Profile {
        Profile::Monomial { c, px, py }
    }

    fn su2_connection() -> SmoothConnection {
        fixtures::connection(&su2())
    }

    fn su2_eta() -> SmoothConnection {
        fixtures::perturbation(&su2())
    }

    fn su2_curvature() -> CurvatureField {
        fixtures::curvature(&su2())
    }

    fn radial_slice_connection() -> SmoothConnection {
        fixtures::radial_slice_connection(&su2())
    }

    fn wiggle() -> SmoothPath {
        fixtures::wiggle()
    }

    #[test]
    fn axial_from_closed_form_curvatures() {
        let xi = su2().basis()[0].clone();
        let a = axial_from_curvature(&CurvatureField::zero(2));
        assert!(a.is_axial() && a.components([0.3, 0.7])[0].max_abs() == 0.0);
        let a = axial_from_curvature(&CurvatureField::from_terms(2, vec![(Profile::Const(1.0), xi.clone())]));
        for [x, y] in probe_points() {
            assert!(a.components([x, y])[0].dist_max(&xi.scale_re(-y)) < 1e-14);
        }
        let a = axial_from_curvature(&CurvatureField::from_terms(2, vec![(mono(1.0, 1, 0), xi.clone())]));
        for [x, y] in probe_points() {
            assert!(a.components([x, y])[0].dist_max(&xi.scale_re(-x * y)) < 1e-14);
        }
        let f = su2_curvature();
        let a = axial_from_curvature(&f);
        assert!(axial_roundtrip_residual(&a, &f) < 1e-8);
        assert!(a.axial_defect() < 1e-12);
    }

    #[test]
    fn transport_closed_forms() {
        let dim = 2;
        let rect = SmoothPath::rect_boundary(0.0, 0.7, 0.0, 0.4);
        assert_eq!(ode_transport(&SmoothConnection::zero(dim), &rect, 50), CMat::identity(dim));
        let xi = u1_xi();
        let a = SmoothConnection::from_terms(1, vec![(mono(-1.0, 0, 1), xi.clone())], vec![]);
        let hol = ode_transport(&a, &rect, 200);
        assert!(hol.dist_max(&xi.scale_re(-0.28).expm()) < 1e-12);
        let a = su2_connection();
        let t = ode_transport(&a, &wiggle(), DEFAULT_STEPS);
        let back = ode_transport(&a, &wiggle().reversed(), DEFAULT_STEPS);
        assert!((&t * &back).dist_max(&CMat::identity(2)) < 1e-10);
        assert!(unitarity_defect(&t) < 1e-10);
        let o = transport_order(&a, &wiggle(), 8);
        assert!(o.order > 3.5, "{o:?}");
    }

    #[test]
    fn gauge_identities_hold() {
        let b = su2().basis().to_vec();
        let a = su2_connection();
        let same = gauge_identities(&a, &Gauge::identity(2), &wiggle(), DEFAULT_STEPS);
        assert!(same.transport_residual < 1e-12 && same.curvature_residual < 1e-7);
        let g = Gauge::exp_product(2, vec![(wave(1.1, 0.9, -0.4, 0.0), b[0].clone()), (mono(0.8, 1, 1), b[2].clone())]);
        let c = gauge_identities(&a, &g, &wiggle(), DEFAULT_STEPS);
        assert!(c.transport_residual < 1e-7 && c.curvature_residual < 1e-6, "{c:?}");
        // abelian: A^g = A + g^{-1} dg and F is unchanged
        let xi = u1_xi();
        let a = SmoothConnection::from_terms(1, vec![(wave(0.5, 1.0, 2.0, 0.0), xi.clone())], vec![(mono(1.0, 1, 0), xi.clone())]);
        let g = Gauge::exp_product(1, vec![(wave(0.7, 0.3, 1.3, 0.5), xi.clone())]);
        let ag = gauge_transform(&a, &g);
        for p in probe_points() {
            let [_, gx, gy] = g.jet(p);
            let gi = g.value(p).adjoint();
            let [a1, a2] = a.components(p);
            let want = [&a1 + &(&gi * &gx), &a2 + &(&gi * &gy)];
            let got = ag.components(p);
            assert!(got[0].dist_max(&want[0]) < 1e-14 && got[1].dist_max(&want[1]) < 1e-14);
            assert!(ag.curvature(p).dist_max(&a.curvature(p)) < 1e-8);
        }
    }

    #[test]
    fn connection_comparison_cases() {
        let a = su2_connection();
        let c = connection_comparison(&a, &a, &wiggle(), 200);
        assert!(c.k.dist_max(&CMat::identity(2)) < 1e-14 && c.residual < 1e-12);
        let xi = u1_xi();
        let a = SmoothConnection::from_terms(1, vec![(mono(1.0, 1, 1), xi.clone())], vec![]);
        let b = a.add(&SmoothConnection::from_terms(1, vec![], vec![(mono(1.0, 1, 0), xi.clone())]), 1.0);
        // int (B - A) along the wiggle = int x dy
        let path = wiggle();
        let w = quad(0.0, 1.0, 4, |t| {
            let (p, v) = path.pieces()[0](t);
            p[0] * v[1]
        });
        let c = connection_comparison(&a, &b, &path, 400);
        assert!(c.k.dist_max(&xi.scale_re(-w).expm()) < 1e-12);
        let c = connection_comparison(&su2_connection(), &su2_connection().add(&su2_eta(), 1.0), &path, DEFAULT_STEPS);
        assert!(c.residual < 1e-7, "{c:?}");
    }

    #[test]
    fn connection_derivative_cases() {
        let a = su2_connection();
        let d = connection_derivative(&a, &SmoothConnection::zero(2), &wiggle(), 200);
        assert!(d.analytic.max_abs() == 0.0 && d.rel_err == 0.0);
        let xi = u1_xi();
        let a1 = SmoothConnection::from_terms(1, vec![(mono(1.0, 1, 1), xi.clone())], vec![]);
        let eta = SmoothConnection::from_terms(1, vec![(Profile::Const(1.0), xi.clone())], vec![]);
        let d = connection_derivative(&a1, &eta, &wiggle(), 400);
        // int eta<l'> = 0.6 xi
        let want = -&(&ode_transport(&a1, &wiggle(), 400) * &xi.scale_re(0.6));
        assert!(d.analytic.dist_max(&want) < 1e-12 && d.rel_err < 1e-5);
        let d = connection_derivative(&a, &su2_eta(), &wiggle(), DEFAULT_STEPS);
        assert!(d.rel_err < 1e-5, "{}", d.rel_err);
    }

    fn bump_family() -> PathFamily {
        fixtures::bump_family()
    }

    #[test]
    fn path_derivative_cases() {
        let flat = SmoothConnection::zero(2);
        let d = path_derivative(&flat, &bump_family(), 0.3, 200).unwrap();
        assert!(!d.covariant && d.check.analytic.max_abs() == 0.0);
        // U1 with f = xi: the holonomy is exp((2 s / pi) xi)
        let xi = u1_xi();
        let a = SmoothConnection::from_terms(1, vec![(mono(-1.0, 0, 1), xi.clone())], vec![]);
        let s = 0.4;
        let d = path_derivative(&a, &bump_family(), s, 400).unwrap();
        let want = &xi.scale_re(2.0 / PI) * &xi.scale_re(2.0 * s / PI).expm();
        assert!(d.check.analytic.dist_max(&want) < 1e-10 && d.check.rel_err < 1e-5);
        let a = su2_connection();
        let d = path_derivative(&a, &bump_family(), s, DEFAULT_STEPS).unwrap();
        assert!(d.check.rel_err < 1e-5, "{d:?}");
        let moving = PathFamily::new(|s, t| [[t, s * t * t + 0.2 * t], [1.0, 2.0 * s * t + 0.2], [0.0, t * t]]);
        let d = path_derivative(&a, &moving, s, DEFAULT_STEPS).unwrap();
        assert!(d.covariant && d.check.rel_err < 1e-5 && d.corollary.as_ref().unwrap().rel_err < 1e-5, "{d:?}");
        let bad = PathFamily::new(|s, t| [[t + s, 0.0], [1.0, 0.0], [1.0, 0.0]]);
        assert!(path_derivative(&a, &bad, 0.0, 10).is_err());
    }

    #[test]
    fn axial_projection_cases() {
        let f = su2_curvature();
        let a = axial_from_curvature(&f);
        let pr = axial_projection(&a, 200).unwrap();
        assert!(pr.gauge_at(0.7).dist_max(&CMat::identity(2)) < 1e-15);
        let xi = u1_xi();
        let a = SmoothConnection::from_terms(1, vec![(mono(1.0, 2, 0), xi.clone()), (mono(1.0, 0, 1), xi.clone())], vec![]);
        let pr = axial_projection(&a, 200).unwrap();
        assert!(pr.gauge_at(0.6).dist_max(&xi.scale_re(-0.072).expm()) < 1e-12);
        let b = su2().basis().to_vec();
        let general = SmoothConnection::from_terms(2, vec![(wave(0.8, 1.1, 0.6, 0.4), b[1].clone()), (mono(0.6, 1, 0), b[2].clone())], vec![]);
        let proj = axial_projection(&general, 200).unwrap();
        assert!(proj.projected().axial_defect() < 1e-10);
        let gt = gauge_transform(&general, &proj.gauge());
        assert!(connection_distance(&gt, &proj.projected()) < 1e-12);
        assert!(axial_projection(&su2_connection(), 10).is_err());
        let base = axial_from_curvature(&su2_curvature());
        let r = axial_perturbation_residual(&base, &general, &wiggle(), 400).unwrap();
        assert!(r < 1e-7, "{r}");
    }

    #[test]
    fn loop_expansion_cases() {
        let shape = LoopShape { width: 0.8, height: 1.0 };
        let eps = [0.4, 0.2, 0.1, 0.05];
        let e = smooth_loop_expansion(&CurvatureField::zero(2), shape, &eps, None, 100);
        assert!(e.rows.iter().all(|r| r.remainder == 0.0) && e.slope.is_none());
        let xi = u1_xi();
        let e = smooth_loop_expansion(&CurvatureField::from_terms(1, vec![(Profile::Const(1.3), xi)]), shape, &eps, None, 400);
        for r in &e.rows {
            let theta = 1.3 * r.eps * r.eps * 0.8 * 2.0 / PI;
            let want = (C64::from_polar(1.0, -theta) - 1.0 + C64::new(0.0, theta)).norm();
            assert!((r.remainder - want).abs() < 1e-12 && r.green_residual < 1e-12);
        }
        assert!((e.slope.unwrap().slope - 4.0).abs() < 0.05);
        let b = su2().basis().to_vec();
        let m = &CMat::identity(2) + &b[0].scale_re(0.8);
        for w in [None, Some(&m)] {
            let e = smooth_loop_expansion(&su2_curvature(), shape, &eps, w, DEFAULT_STEPS);
            let s = e.slope.as_ref().unwrap().slope;
            let sr = e.reflected_slope.as_ref().unwrap().slope;
            assert!((3.6..=4.4).contains(&s) && (3.6..=4.4).contains(&sr), "{e:?}");
            assert!(e.rows.iter().all(|r| r.green_residual < 1e-6));
        }
    }

    #[test]
    fn homotopy_projection_cases() {
        let a = axial_from_curvature(&su2_curvature());
        let p = homotopy_project(&a, Homotopy::CompleteAxial, 400);
        assert!(connection_distance(&p, &a) < 1e-8);
        let b = su2().basis().to_vec();
        let general = SmoothConnection::from_terms(2, vec![(wave(0.8, 1.1, 0.6, 0.4), b[1].clone()), (mono(0.6, 1, 0), b[2].clone())], vec![]);
        let p = homotopy_project(&general, Homotopy::CompleteAxial, 400);
        let q = axial_projection(&general, 400).unwrap().projected();
        assert!(connection_distance(&p, &q) < 1e-8);
        let a = su2_connection();
        let r = homotopy_project(&a, Homotopy::Radial, 400);
        assert!(slice_residual(&r, Homotopy::Radial) < 1e-6);
        assert!(slice_residual(&homotopy_project(&a, Homotopy::CompleteAxial, 400), Homotopy::CompleteAxial) < 1e-6);
        let x = [0.45, -0.3];
        let direct = homotopy_project_direct(&a, Homotopy::Radial, x, 400);
        let via = r.components(x);
        assert!(direct[0].dist_max(&via[0]) < 1e-8 && direct[1].dist_max(&via[1]) < 1e-8);
    }

    #[test]
    fn reconstruction_cases() {
        let z = reconstruct_from_curvature(&CurvatureField::zero(2), Homotopy::Radial);
        assert!(connection_distance(&z, &SmoothConnection::zero(2)) == 0.0);
        let xi = su2().basis()[1].clone();
        let f = CurvatureField::from_terms(2, vec![(Profile::Const(0.7), xi.clone())]);
        let a = reconstruct_from_curvature(&f, Homotopy::CompleteAxial);
        let want = SmoothConnection::from_terms(2, vec![(mono(-0.7, 0, 1), xi)], vec![]);
        assert!(connection_distance(&a, &want) < 1e-14);
        let f = su2_curvature();
        let a = axial_from_curvature(&f);
        let back = reconstruct_from_curvature(&CurvatureField::of(&a), Homotopy::CompleteAxial);
        assert!(connection_distance(&a, &back) < 1e-6);
        let r = radial_slice_connection();
        assert!(slice_residual(&r, Homotopy::Radial) < 1e-14);
        assert!(connection_distance(&homotopy_project(&r, Homotopy::Radial, 400), &r) < 1e-10);
        let back = reconstruct_from_curvature(&CurvatureField::of(&r), Homotopy::Radial);
        assert!(connection_distance(&r, &back) < 1e-6);
    }

    #[test]
    fn projected_vector_field_cases() {
        let x = [0.5, 0.35];
        let a = radial_slice_connection();
        let z = projected_vector_field(&a, &SmoothConnection::zero(2), Homotopy::Radial, x, 200).unwrap();
        assert!(z.analytic[0].max_abs() == 0.0 && z.numeric[0].max_abs() == 0.0);
        let xi = u1_xi();
        let a1 = SmoothConnection::zero(1);
        let eta = SmoothConnection::from_terms(1, vec![(mono(1.0, 1, 1), xi.clone())], vec![(wave(0.5, 1.0, 0.3, 0.0), xi)]);
        let r = projected_vector_field(&a1, &eta, Homotopy::Radial, x, 200).unwrap();
        assert!(r.rel_err < 1e-4 && r.reparam_residual < 1e-8);
        let r = projected_vector_field(&a, &su2_eta(), Homotopy::Radial, x, 200).unwrap();
        assert!(r.rel_err < 1e-4 && r.flipped_rel_err > 1e-2 && r.reparam_residual < 1e-8, "{r:?}");
        assert!(projected_vector_field(&su2_connection(), &su2_eta(), Homotopy::Radial, x, 50).is_err());
    }

    #[test]
    fn diffeomorphism_and_covariant_identities() {
        let a = su2_connection();
        assert!(naturality_residual(&a, [[1.0, 0.6], [0.0, 1.0]], &wiggle(), DEFAULT_STEPS) < 1e-7);
        let (l, r) = shear_curvature_norms(&a, 0.6);
        assert!((l - r).abs() < 1e-6 && l > 0.1);
        let b = su2().basis().to_vec();
        let (b0, b2) = (b[0].clone(), b[2].clone());
        let section = move |t: f64| {
            let mut s = CMat::identity(2).scale_re((2.0 * t).cos());
            s.axpy(t * t, &b0);
            s.axpy(0.5, &b2);
            let mut ds = CMat::identity(2).scale_re(-2.0 * (2.0 * t).sin());
            ds.axpy(2.0 * t, &b0);
            [s, ds]
        };
        for t in [0.2, 0.55, 0.9] {
            assert!(covariant_derivative_residual(&a, &wiggle(), &section, t, 2000) < 1e-7);
        }
    }

    #[test]
    fn standard_suite_passes_for_several_groups() {
        for kind in [GroupKind::U1, GroupKind::SU2, GroupKind::SUN(3)] {
            let ctx = GroupContext::new(kind).unwrap();
            let checks = standard_suite(&ctx, DEFAULT_STEPS).unwrap();
            let failed: Vec<_> = checks.iter().filter(|c| !c.pass).collect();
            assert!(failed.is_empty(), "{kind}: {failed:?}");
        }
    }
}
