//! Stochastic parallel transport along staircase paths, and the deterministic
//! machinery for perturbed noise (`g_eta`, `k_eta`, the shifted field).
//!
//! A horizontal curve sweeps, column by column, the slab between the curve and
//! the x-axis. The increment over a slab is `dM = -fhat(slab)` and the
//! transport advances by `// <- exp(-dM) //`.

use crate::error::{Error, Result};
use crate::lie::{AlgebraElement, GroupContext, GroupElement, ProductAccumulator};
use crate::linalg::CMat;
use crate::noise::{GridWindow, NoiseField};
use serde::{Deserialize, Serialize};

const CHAIN_TOL: f64 = 1e-9;

/// Graph of a piecewise-constant height over `[breaks[0], breaks[k]]`; the
/// implied vertical jumps between pieces carry trivial transport.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizontalCurve {
    breaks: Vec<f64>,
    heights: Vec<f64>,
}

impl HorizontalCurve {
    pub fn flat(x_start: f64, x_end: f64, y: f64) -> Result<Self> {
        Self::staircase(vec![x_start, x_end], vec![y])
    }

    /// Height `heights[i]` on `[breaks[i], breaks[i + 1]]`.
    pub fn staircase(breaks: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        if breaks.len() != heights.len() + 1 || heights.is_empty() {
            return Err(Error::InvalidArgument("need one more break than heights".into()));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("curve breaks must increase strictly".into()));
        }
        if breaks.iter().chain(&heights).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite curve data".into()));
        }
        Ok(HorizontalCurve { breaks, heights })
    }

    pub fn x_start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn x_end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn start(&self) -> (f64, f64) {
        (self.x_start(), self.heights[0])
    }

    pub fn end(&self) -> (f64, f64) {
        (self.x_end(), *self.heights.last().unwrap())
    }

    /// Height over the half-open piece containing `x` (the last piece is closed).
    pub fn height_at(&self, x: f64) -> f64 {
        let k = self.breaks[1..].iter().position(|&b| x < b).unwrap_or(self.heights.len() - 1);
        self.heights[k]
    }

    /// Signed area between the curve and the x-axis.
    pub fn signed_area(&self) -> f64 {
        self.breaks.windows(2).zip(&self.heights).map(|(w, h)| (w[1] - w[0]) * h).sum()
    }

    /// The slabs swept on `window`: one `(col, row_lo, row_hi)` per column.
    pub fn slabs(&self, window: &GridWindow) -> Result<Vec<(usize, usize, usize)>> {
        let j0 = window.origin_row();
        let mut out = Vec::new();
        for (w, &h) in self.breaks.windows(2).zip(&self.heights) {
            let c0 = window.node_x(w[0], "curve abscissa")?;
            let c1 = window.node_x(w[1], "curve abscissa")?;
            let r = window.node_y(h, "curve height")?;
            let (lo, hi) = if r >= j0 { (j0, r) } else { (r, j0) };
            out.extend((c0..c1).map(|c| (c, lo, hi)));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Forward(HorizontalCurve),
    Backward(HorizontalCurve),
    Vertical { x: f64, y0: f64, y1: f64 },
}

impl Segment {
    pub fn start(&self) -> (f64, f64) {
        match self {
            Segment::Forward(c) => c.start(),
            Segment::Backward(c) => c.end(),
            Segment::Vertical { x, y0, .. } => (*x, *y0),
        }
    }

    pub fn end(&self) -> (f64, f64) {
        match self {
            Segment::Forward(c) => c.end(),
            Segment::Backward(c) => c.start(),
            Segment::Vertical { x, y1, .. } => (*x, *y1),
        }
    }

    pub fn reversed(&self) -> Segment {
        match self {
            Segment::Forward(c) => Segment::Backward(c.clone()),
            Segment::Backward(c) => Segment::Forward(c.clone()),
            Segment::Vertical { x, y0, y1 } => Segment::Vertical { x: *x, y0: *y1, y1: *y0 },
        }
    }

    fn cancels(&self, next: &Segment) -> bool {
        match (self, next) {
            (Segment::Forward(a), Segment::Backward(b)) | (Segment::Backward(a), Segment::Forward(b)) => a == b,
            _ => false,
        }
    }
}

/// Concatenation of horizontal and vertical segments, traversed in order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TamePath {
    segments: Vec<Segment>,
}

fn close(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 - b.0).abs() <= CHAIN_TOL && (a.1 - b.1).abs() <= CHAIN_TOL
}

impl TamePath {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::BrokenPath("a path needs at least one segment".into()));
        }
        for (k, w) in segments.windows(2).enumerate() {
            if !close(w[0].end(), w[1].start()) {
                return Err(Error::BrokenPath(format!(
                    "segment {} ends at {:?} but segment {} starts at {:?}",
                    k,
                    w[0].end(),
                    k + 1,
                    w[1].start()
                )));
            }
        }
        Ok(TamePath { segments })
    }

    pub fn forward(c: HorizontalCurve) -> Self {
        TamePath { segments: vec![Segment::Forward(c)] }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn initial(&self) -> (f64, f64) {
        self.segments[0].start()
    }

    pub fn terminal(&self) -> (f64, f64) {
        self.segments.last().unwrap().end()
    }

    pub fn reversed(&self) -> TamePath {
        TamePath { segments: self.segments.iter().rev().map(Segment::reversed).collect() }
    }

    pub fn then(&self, other: &TamePath) -> Result<TamePath> {
        let mut s = self.segments.clone();
        s.extend(other.segments.iter().cloned());
        TamePath::new(s)
    }

    /// Horizontal segments after free cancellation of adjacent inverse pairs.
    fn reduced(&self) -> Vec<&Segment> {
        let mut stack: Vec<&Segment> = Vec::new();
        for s in &self.segments {
            if matches!(s, Segment::Vertical { .. }) {
                continue;
            }
            if let Some(top) = stack.last() {
                if top.cancels(s) {
                    stack.pop();
                    continue;
                }
            }
            stack.push(s);
        }
        stack
    }
}

/// Martingale increments `-fhat(slab)` as basis coordinates, one block of
/// `m` values per sub-step (`substeps` per column).
pub fn martingale_increment_coords(field: &NoiseField, curve: &HorizontalCurve, substeps: usize) -> Result<Vec<f64>> {
    let m = field.algebra_dim();
    let slabs = curve.slabs(field.window())?;
    let s = substeps.max(1);
    let mut out = vec![0.0; slabs.len() * s * m];
    for (k, &(c, lo, hi)) in slabs.iter().enumerate() {
        let block = &mut out[k * s * m..(k + 1) * s * m];
        if s == 1 {
            field.add_column_interval_hat(c, lo, hi, -1.0, block);
        } else {
            field.add_refined_interval_hat(c, lo, hi, s, -1.0, block);
        }
    }
    Ok(out)
}

pub fn martingale_increments(field: &NoiseField, curve: &HorizontalCurve, substeps: usize) -> Result<Vec<AlgebraElement>> {
    let m = field.algebra_dim().max(1);
    let ctx = field.ctx();
    Ok(martingale_increment_coords(field, curve, substeps)?.chunks(m).map(|c| ctx.from_coords(c)).collect())
}

/// Exponential scheme `// <- exp(fhat(piece)) //` over every sub-step.
pub fn transport_horizontal(field: &NoiseField, curve: &HorizontalCurve, substeps: usize) -> Result<GroupElement> {
    let ctx = field.ctx();
    let m = field.algebra_dim();
    let slabs = curve.slabs(field.window())?;
    let s = substeps.max(1);
    let mut acc = ProductAccumulator::new(ctx);
    let mut buf = vec![0.0; s * m];
    for &(c, lo, hi) in &slabs {
        if lo == hi {
            continue;
        }
        buf.iter_mut().for_each(|v| *v = 0.0);
        if s == 1 {
            field.add_column_interval_hat(c, lo, hi, 1.0, &mut buf);
        } else {
            field.add_refined_interval_hat(c, lo, hi, s, 1.0, &mut buf);
        }
        for piece in buf.chunks(m.max(1)).take(s) {
            acc.left_mul(&ctx.exp_map(&ctx.from_coords(piece)));
        }
    }
    Ok(acc.finish())
}

/// Transport at every sub-step boundary: `(x, //_x)`, starting with `(x_start, I)`.
pub fn transport_trajectory(field: &NoiseField, curve: &HorizontalCurve, substeps: usize) -> Result<Vec<(f64, GroupElement)>> {
    let ctx = field.ctx();
    let m = field.algebra_dim();
    let w = field.window();
    let slabs = curve.slabs(w)?;
    let s = substeps.max(1);
    let hx = w.hx();
    let mut acc = ProductAccumulator::new(ctx);
    let mut out = Vec::with_capacity(slabs.len() * s + 1);
    out.push((curve.x_start(), ctx.identity()));
    let mut buf = vec![0.0; s * m];
    for &(c, lo, hi) in &slabs {
        buf.iter_mut().for_each(|v| *v = 0.0);
        if s == 1 {
            field.add_column_interval_hat(c, lo, hi, 1.0, &mut buf);
        } else {
            field.add_refined_interval_hat(c, lo, hi, s, 1.0, &mut buf);
        }
        for k in 0..s {
            if lo < hi {
                acc.left_mul(&ctx.exp_map(&ctx.from_coords(&buf[k * m..(k + 1) * m])));
            }
            out.push((w.x_of(c) + hx * (k + 1) as f64 / s as f64, acc.current().clone()));
        }
    }
    Ok(out)
}

/// `//(sigma) = //(l_k) ... //(l_1)`; backward pieces contribute the inverse,
/// vertical pieces the identity. Adjacent inverse pairs cancel exactly.
pub fn transport_tame(field: &NoiseField, path: &TamePath, substeps: usize) -> Result<GroupElement> {
    let ctx = field.ctx();
    let mut acc = ProductAccumulator::new(ctx);
    for seg in path.reduced() {
        match seg {
            Segment::Forward(c) => acc.left_mul(&transport_horizontal(field, c, substeps)?),
            Segment::Backward(c) => acc.left_mul(&transport_horizontal(field, c, substeps)?.adjoint()),
            Segment::Vertical { .. } => {}
        }
    }
    Ok(acc.finish())
}

/// Axis-aligned rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::InvalidArgument("rectangle must have positive extent".into()));
        }
        Ok(Rect { x0, x1, y0, y1 })
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Mirror image across the x-axis.
    pub fn reflected(&self) -> Rect {
        Rect { x0: self.x0, x1: self.x1, y0: -self.y1, y1: -self.y0 }
    }

    fn overlap(&self, o: &Rect) -> f64 {
        let w = (self.x1.min(o.x1) - self.x0.max(o.x0)).max(0.0);
        let h = (self.y1.min(o.y1) - self.y0.max(o.y0)).max(0.0);
        w * h
    }
}

/// A perturbation `eta_y = sum_k 1_{R_k} X_k` together with its integrals
/// `eta(x, y) = int_{-inf}^y eta_y` and `etabar(x, y) = int_0^y eta_y`.
#[derive(Clone, Debug)]
pub struct PerturbationOneForm {
    terms: Vec<(Rect, AlgebraElement, Vec<f64>)>,
    dim: usize,
}

impl PerturbationOneForm {
    pub fn zero(ctx: &GroupContext) -> Self {
        PerturbationOneForm { terms: Vec::new(), dim: ctx.matrix_dim() }
    }

    pub fn new(ctx: &GroupContext, terms: Vec<(Rect, AlgebraElement)>) -> Self {
        let terms = terms.into_iter().map(|(r, x)| {
            let c = ctx.coords(&x);
            (r, x, c)
        });
        PerturbationOneForm { terms: terms.collect(), dim: ctx.matrix_dim() }
    }

    /// `eta_y = (1_{RQ} - 1_Q) xi` for a rectangle `Q` in the upper half-plane.
    pub fn reflected_pair(ctx: &GroupContext, q: Rect, xi: &AlgebraElement) -> Self {
        Self::new(ctx, vec![(q.reflected(), xi.clone()), (q, xi.scale_re(-1.0))])
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Rect, &AlgebraElement)> {
        self.terms.iter().map(|(r, x, _)| (r, x))
    }

    pub fn check_support(&self, window: &GridWindow) -> Result<()> {
        for (r, _, _) in &self.terms {
            if r.x0 < window.x_min || r.x1 > window.x_max || r.y0 < window.y_min || r.y1 > window.y_max {
                return Err(Error::OutsideWindow("perturbation support leaves the window".into()));
            }
        }
        Ok(())
    }

    pub fn eta_y(&self, x: f64, y: f64) -> CMat {
        let mut out = CMat::zeros(self.dim);
        for (r, v, _) in &self.terms {
            if x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1 {
                out += v;
            }
        }
        out
    }

    /// `eta(x, y) = int_{-inf}^y eta_y(x, y') dy'`.
    pub fn eta(&self, x: f64, y: f64) -> CMat {
        let mut out = CMat::zeros(self.dim);
        for (r, v, _) in &self.terms {
            if x >= r.x0 && x < r.x1 {
                let len = (y.min(r.y1) - r.y0).max(0.0);
                if len > 0.0 {
                    out.axpy(len, v);
                }
            }
        }
        out
    }

    /// `etabar(x, y) = int_0^y eta_y(x, y') dy'` (signed for y < 0).
    pub fn eta_bar(&self, x: f64, y: f64) -> CMat {
        let mut out = self.eta(x, y);
        out.axpy(-1.0, &self.eta(x, 0.0));
        out
    }

    /// Basis coordinates of `int_cell eta_y` for every cell of `window`.
    pub fn cell_integrals(&self, window: &GridWindow, m: usize) -> Vec<f64> {
        let mut out = vec![0.0; window.cells() * m];
        let (hx, hy) = (window.hx(), window.hy());
        for (r, _, c) in &self.terms {
            let c0 = ((r.x0 - window.x_min) / hx).floor().max(0.0) as usize;
            let c1 = (((r.x1 - window.x_min) / hx).ceil() as usize).min(window.nx);
            let r0 = ((r.y0 - window.y_min) / hy).floor().max(0.0) as usize;
            let r1 = (((r.y1 - window.y_min) / hy).ceil() as usize).min(window.ny);
            for i in c0..c1 {
                for j in r0..r1 {
                    let cell = Rect { x0: window.x_of(i), x1: window.x_of(i + 1), y0: window.y_of(j), y1: window.y_of(j + 1) };
                    let a = cell.overlap(r);
                    if a > 0.0 {
                        for k in 0..m {
                            out[(i * window.ny + j) * m + k] += a * c[k];
                        }
                    }
                }
            }
        }
        out
    }
}

/// Classical RK4 step for `y' = -A(x) y` with stage coefficients `a0, ah, a1`
/// at `x, x + h/2, x + h`.
fn rk4_linear(y: &CMat, a0: &CMat, ah: &CMat, a1: &CMat, h: f64) -> CMat {
    let k1 = -&(a0 * y);
    let mut t = y.clone();
    t.axpy(h / 2.0, &k1);
    let k2 = -&(ah * &t);
    let mut t = y.clone();
    t.axpy(h / 2.0, &k2);
    let k3 = -&(ah * &t);
    let mut t = y.clone();
    t.axpy(h, &k3);
    let k4 = -&(a1 * &t);
    let mut out = y.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    out
}

/// Solves `dg/dx + eta(x, 0) g = 0`, `g(0) = I`, by RK4 with steps of at most
/// `max_step`, forward or backward from 0.
pub fn g_eta(ctx: &GroupContext, eta: &PerturbationOneForm, x: f64, max_step: f64) -> Result<GroupElement> {
    if eta.is_zero() || x == 0.0 {
        return Ok(ctx.identity());
    }
    let n = (x.abs() / max_step).ceil().max(1.0) as usize;
    let h = x / n as f64;
    let mut g = ctx.identity();
    for k in 0..n {
        let x0 = k as f64 * h;
        // eta is piecewise constant in x, so sample stages strictly inside the step
        let a0 = eta.eta(x0 + h * 1e-9, 0.0);
        let ah = eta.eta(x0 + h / 2.0, 0.0);
        let a1 = eta.eta(x0 + h * (1.0 - 1e-9), 0.0);
        g = rk4_linear(&g, &a0, &ah, &a1, h);
    }
    ctx.retract(&g)
}

/// `g_eta` at every vertical grid line of `window`, step `h_x / 4`.
pub fn g_eta_on_nodes(ctx: &GroupContext, eta: &PerturbationOneForm, window: &GridWindow) -> Result<Vec<GroupElement>> {
    let i0 = window.origin_col();
    let mut out = vec![ctx.identity(); window.nx + 1];
    if eta.is_zero() {
        return Ok(out);
    }
    for dir in [1i64, -1] {
        let mut g = ctx.identity();
        let mut i = i0 as i64;
        loop {
            let next = i + dir;
            if next < 0 || next > window.nx as i64 {
                break;
            }
            let (xa, xb) = (window.x_of(i as usize), window.x_of(next as usize));
            let step = (xb - xa) / 4.0;
            for k in 0..4 {
                let x0 = xa + k as f64 * step;
                let a0 = eta.eta(x0 + step * 1e-9, 0.0);
                let ah = eta.eta(x0 + step / 2.0, 0.0);
                let a1 = eta.eta(x0 + step * (1.0 - 1e-9), 0.0);
                g = rk4_linear(&g, &a0, &ah, &a1, step);
            }
            out[next as usize] = ctx.retract(&g)?;
            i = next;
        }
    }
    Ok(out)
}

/// The shifted field `f_eta(c) = Ad_{g_eta(x_c)^{-1}}(f(c) - int_c eta_y)`,
/// with `g_eta` frozen at each column's left edge.
pub fn shifted_field_view(field: &NoiseField, eta: &PerturbationOneForm) -> Result<NoiseField> {
    let w = field.window();
    eta.check_support(w)?;
    let ctx = field.ctx();
    let nodes = g_eta_on_nodes(ctx, eta, w)?;
    let g_inv: Vec<CMat> = nodes[..w.nx].iter().map(|g| g.adjoint()).collect();
    let shift = eta.cell_integrals(w, field.algebra_dim());
    field.shifted(&shift, &g_inv)
}

/// Solves `dk/dx + Ad_{//_x^{-1}} eta(x, y(x)) k = 0`, `k(x_start) = I`, along
/// `curve` by RK4 (steps of at most `h_x / 4`), with `//_x` frozen at the start
/// of each transport sub-step.
pub fn k_eta(field: &NoiseField, curve: &HorizontalCurve, eta: &PerturbationOneForm, substeps: usize) -> Result<GroupElement> {
    let ctx = field.ctx();
    if eta.is_zero() {
        curve.slabs(field.window())?;
        return Ok(ctx.identity());
    }
    let traj = transport_trajectory(field, curve, substeps)?;
    let s = substeps.max(1);
    let per_piece = 4usize.div_ceil(s).max(1);
    let mut k = ctx.identity();
    for w in traj.windows(2) {
        let (xa, pa) = (&w[0].0, &w[0].1);
        let xb = w[1].0;
        let step = (xb - xa) / per_piece as f64;
        let y = curve.height_at(0.5 * (xa + xb));
        for q in 0..per_piece {
            let x0 = xa + q as f64 * step;
            let coef = |x: f64| ctx.adjoint_group_inv(pa, &eta.eta(x, y));
            let a0 = coef(x0 + step * 1e-9);
            let ah = coef(x0 + step / 2.0);
            let a1 = coef(x0 + step * (1.0 - 1e-9));
            k = rk4_linear(&k, &a0, &ah, &a1, step);
        }
    }
    ctx.retract(&k)
}

/// `|| //^{f_eta}(l) - g_eta(b)^{-1} //^f(l) k^eta(l) g_eta(a) ||_max`.
pub fn perturbed_transport_identity_residual(
    field: &NoiseField,
    curve: &HorizontalCurve,
    eta: &PerturbationOneForm,
    substeps: usize,
) -> Result<f64> {
    let ctx = field.ctx();
    let shifted = shifted_field_view(field, eta)?;
    let lhs = transport_horizontal(&shifted, curve, substeps)?;
    let step = field.window().hx() / 4.0;
    let ga = g_eta(ctx, eta, curve.x_start(), step)?;
    let gb = g_eta(ctx, eta, curve.x_end(), step)?;
    let t = transport_horizontal(field, curve, substeps)?;
    let k = k_eta(field, curve, eta, substeps)?;
    let rhs = &(&(&gb.adjoint() * &t) * &k) * &ga;
    Ok(lhs.dist_max(&rhs))
}

/// `zeta(sigma)`: the direction with `d/ds //^{f + s eta}(sigma) = //(sigma) zeta`
/// up to the sign fixed by the integration-by-parts identity, i.e.
/// `sum_j Ad_{(P_{j-1}...P_1)^{-1}} Z_j` with `Z = int Ad_{//_x^{-1}} eta(x, y(x)) dx`
/// on forward pieces and `-Ad_{//} Z` on backward pieces.
pub fn zeta(field: &NoiseField, path: &TamePath, eta: &PerturbationOneForm, substeps: usize) -> Result<AlgebraElement> {
    let ctx = field.ctx();
    let mut total = ctx.zero();
    if eta.is_zero() {
        return Ok(total);
    }
    let mut before = ctx.identity();
    for seg in path.segments() {
        let (z, p) = match seg {
            Segment::Vertical { .. } => continue,
            Segment::Forward(c) => {
                let (z, t) = forward_zeta(field, c, eta, substeps)?;
                (z, t)
            }
            Segment::Backward(c) => {
                let (z, t) = forward_zeta(field, c, eta, substeps)?;
                (-&ctx.adjoint_group(&t, &z), t.adjoint())
            }
        };
        total += &ctx.adjoint_group_inv(&before, &z);
        before = &p * &before;
    }
    Ok(total)
}

/// `int Ad_{//_x^{-1}} eta(x, y(x)) dx` by the midpoint rule on each sub-step
/// (exact when eta is constant there), together with the full transport.
fn forward_zeta(field: &NoiseField, curve: &HorizontalCurve, eta: &PerturbationOneForm, substeps: usize) -> Result<(AlgebraElement, GroupElement)> {
    let ctx = field.ctx();
    let traj = transport_trajectory(field, curve, substeps)?;
    let mut z = ctx.zero();
    for w in traj.windows(2) {
        let (xa, xb) = (w[0].0, w[1].0);
        let xm = 0.5 * (xa + xb);
        let e = eta.eta(xm, curve.height_at(xm));
        if e.max_abs() == 0.0 {
            continue;
        }
        // the transport moves within the sub-step; average its two ends
        let mut a = ctx.adjoint_group_inv(&w[0].1, &e);
        a += &ctx.adjoint_group_inv(&w[1].1, &e);
        z.axpy(0.5 * (xb - xa), &a);
    }
    Ok((z, traj.last().unwrap().1.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::GroupKind;
    use crate::linalg::C64;
    use std::sync::Arc;

    fn setup(kind: GroupKind, seed: u64) -> NoiseField {
        let ctx = Arc::new(GroupContext::new(kind).unwrap());
        let w = GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.5).unwrap();
        NoiseField::sample(ctx, w, seed).unwrap()
    }

    #[test]
    fn increments_sum_to_region_value() {
        let f = setup(GroupKind::SU2, 1);
        let c = HorizontalCurve::flat(0.0, 0.5, 1.0).unwrap();
        let inc = martingale_increment_coords(&f, &c, 4).unwrap();
        let r = crate::noise::GridRegion::rect(f.window(), 0.0, 0.5, 0.0, 1.0).unwrap();
        let fr = f.f_hat_coords(&r).unwrap();
        for a in 0..3 {
            let s: f64 = inc.chunks(3).map(|p| p[a]).sum();
            assert!((s + fr[a]).abs() < 1e-13);
        }
        let flat = HorizontalCurve::flat(0.0, 0.5, 0.0).unwrap();
        assert!(martingale_increment_coords(&f, &flat, 3).unwrap().iter().all(|v| *v == 0.0));
        let below = HorizontalCurve::flat(0.0, 0.05, -1.0).unwrap();
        let inc = martingale_increment_coords(&f, &below, 1).unwrap();
        let slab = crate::noise::GridRegion::rect(f.window(), 0.0, 0.05, -1.0, 0.0).unwrap();
        assert_eq!(inc, f.f_coords(&slab).unwrap());
    }

    #[test]
    fn abelian_transport_is_exact_exponential() {
        let f = setup(GroupKind::U1, 2);
        let c = HorizontalCurve::staircase(vec![-0.3, 0.1, 0.4], vec![1.0, -0.5]).unwrap();
        let inc = martingale_increment_coords(&f, &c, 1).unwrap();
        let m: f64 = inc.iter().sum();
        for s in [1, 3, 8] {
            let t = transport_horizontal(&f, &c, s).unwrap();
            assert!((t.get(0, 0) - C64::new(0.0, -m).exp()).norm() < 1e-12);
        }
    }

    #[test]
    fn tame_path_rules() {
        let f = setup(GroupKind::SU2, 3);
        let c = HorizontalCurve::flat(0.0, 0.5, 1.0).unwrap();
        let p = TamePath::forward(c.clone());
        let loop_back = p.then(&p.reversed()).unwrap();
        assert_eq!(transport_tame(&f, &loop_back, 4).unwrap(), CMat::identity(2));
        let v = TamePath::new(vec![Segment::Vertical { x: 0.1, y0: -1.0, y1: 1.0 }]).unwrap();
        assert_eq!(transport_tame(&f, &v, 4).unwrap(), CMat::identity(2));
        assert_eq!(transport_tame(&f, &p, 4).unwrap(), transport_horizontal(&f, &c, 4).unwrap());
        let broken = TamePath::new(vec![Segment::Forward(c), Segment::Vertical { x: 0.2, y0: 0.0, y1: 1.0 }]);
        assert!(matches!(broken, Err(Error::BrokenPath(_))));
    }

    #[test]
    fn g_eta_scalar_quadrature() {
        let ctx = GroupContext::new(GroupKind::U1).unwrap();
        let xi = CMat::scalar(1, C64::new(0.0, 1.0));
        // eta_y = 0.7 i on [0, 0.4] x [-1, 0], so eta(x, 0) = 0.7 i there
        let eta = PerturbationOneForm::new(&ctx, vec![(Rect::new(0.0, 0.4, -1.0, 0.0).unwrap(), xi.scale_re(0.7))]);
        let g = g_eta(&ctx, &eta, 0.4, 0.0125).unwrap();
        assert!((g.get(0, 0) - C64::new(0.0, -0.28).exp()).norm() < 1e-10);
        assert_eq!(g_eta(&ctx, &eta, -0.3, 0.0125).unwrap(), ctx.identity());
    }

    #[test]
    fn k_eta_on_axis_is_scalar_quadrature() {
        let f = setup(GroupKind::U1, 4);
        let ctx = f.ctx().clone();
        let xi = CMat::scalar(1, C64::new(0.0, 1.0));
        let eta = PerturbationOneForm::new(&ctx, vec![(Rect::new(-0.5, 0.5, -1.0, 0.0).unwrap(), xi.scale_re(0.3))]);
        let c = HorizontalCurve::flat(-0.2, 0.3, 0.0).unwrap();
        let k = k_eta(&f, &c, &eta, 1).unwrap();
        assert!((k.get(0, 0) - C64::new(0.0, -0.15).exp()).norm() < 1e-12);
    }

    #[test]
    fn zero_eta_identity_residual_vanishes() {
        let f = setup(GroupKind::SU2, 5);
        let eta = PerturbationOneForm::zero(f.ctx());
        let c = HorizontalCurve::flat(-0.2, 0.3, 1.0).unwrap();
        assert_eq!(perturbed_transport_identity_residual(&f, &c, &eta, 2).unwrap(), 0.0);
    }

    #[test]
    fn abelian_identity_residual_is_tiny() {
        let f = setup(GroupKind::U1, 6);
        let ctx = f.ctx().clone();
        let xi = ctx.basis()[0].clone();
        let eta = PerturbationOneForm::reflected_pair(&ctx, Rect::new(0.0, 0.1, 0.0, 1.0).unwrap(), &xi);
        for c in [
            HorizontalCurve::flat(-0.2, 0.3, 1.0).unwrap(),
            HorizontalCurve::staircase(vec![-0.4, 0.05, 0.3], vec![-0.5, 0.5]).unwrap(),
        ] {
            assert!(perturbed_transport_identity_residual(&f, &c, &eta, 1).unwrap() < 1e-10);
        }
    }
}
