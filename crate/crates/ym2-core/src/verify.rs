//! Monte-Carlo estimators for the loop equations and their supporting
//! identities, and the closed-form values they are checked against.
//!
//! Every estimator is a pure function of its inputs and a master seed:
//! replica `k` draws its field from [`rng::replica_seed`]`(seed, k)`, replicas
//! run in fixed blocks on the rayon pool, and block summaries are merged in
//! block order on the calling thread.

use crate::error::{Error, Result};
use crate::graph::{check_extended_gauge_invariance, fig8, holonomies, Deform, FigureEight, TameGraph, WilsonFunctional};
use crate::lie::{GroupContext, GroupElement, GroupKind};
use crate::linalg::CMat;
use crate::noise::{GridRegion, GridWindow, NoiseField};
use crate::rng;
use crate::stats::{compare, compare_paired, fit_loglog, ks_weighted, Accumulator, ComparisonReport, KsResult, MCEstimate, SlopeFit};
use crate::transport::{
    perturbed_transport_identity_residual, transport_horizontal, transport_tame, zeta, HorizontalCurve,
    PerturbationOneForm, Segment, TamePath,
};
use crate::AlgebraElement;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::HashSet;
use std::sync::Arc;

/// Replicas per work unit. Fixed, so results do not depend on the thread count.
pub const BLOCK: u64 = 1024;

/// Runs `n` replicas of `f`, each filling `channels` values, and returns one
/// accumulator per channel.
pub fn run_replicas<F>(n: u64, seed: u64, channels: usize, f: F) -> Result<Vec<Accumulator>>
where
    F: Fn(u64, &mut [f64]) -> Result<()> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let blocks = n.div_ceil(BLOCK);
    let partial = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![Accumulator::new(); channels];
            let mut buf = vec![0.0; channels];
            for k in b * BLOCK..((b + 1) * BLOCK).min(n) {
                buf.fill(0.0);
                f(rng::replica_seed(seed, k), &mut buf)?;
                for (a, v) in acc.iter_mut().zip(&buf) {
                    a.push(*v);
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![Accumulator::new(); channels];
    for p in &partial {
        for (t, a) in total.iter_mut().zip(p) {
            t.merge(a);
        }
    }
    Ok(total)
}

/// Like [`run_replicas`] but keeps every replica's output, in replica order.
pub fn map_replicas<T, F>(n: u64, seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    (0..n).into_par_iter().map(|k| f(rng::replica_seed(seed, k))).collect()
}

/// Group, grid and transport resolution shared by the field-based estimators.
#[derive(Clone, Debug)]
pub struct Setup {
    pub ctx: Arc<GroupContext>,
    pub window: GridWindow,
    pub substeps: usize,
    /// Use the identically zero field instead of sampling (diagnostics).
    pub zero_noise: bool,
}

impl Setup {
    pub fn new(ctx: Arc<GroupContext>, window: GridWindow, substeps: usize) -> Self {
        Setup { ctx, window, substeps: substeps.max(1), zero_noise: false }
    }

    /// `[-0.5, 0.5] x [-1, 1]` with `h_x = 0.05`, `h_y = 0.5` and 16 sub-steps.
    pub fn benchmark(kind: GroupKind) -> Result<Self> {
        let ctx = Arc::new(GroupContext::new(kind)?);
        let window = GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.5)?;
        Ok(Self::new(ctx, window, 16))
    }

    pub fn field(&self, seed: u64) -> Result<NoiseField> {
        if self.zero_noise {
            NoiseField::zero(self.ctx.clone(), self.window)
        } else {
            NoiseField::sample(self.ctx.clone(), self.window, seed)
        }
    }

    fn dim(&self) -> usize {
        self.ctx.matrix_dim()
    }
}

// ---------------------------------------------------------------- oracles

/// `z(s) = tr exp(kappa s / 2)`: the expected trace of a lobe word of total area `s`.
pub fn lobe_trace(ctx: &GroupContext, s: f64) -> f64 {
    ctx.heat_mean(s).trace().re
}

/// `-(d/dt1 + d/dt3) tr exp(kappa (t1 + t3) / 2) = -tr(kappa exp(kappa (t1 + t3) / 2))`.
pub fn mm_rhs_oracle(ctx: &GroupContext, t1: f64, t3: f64) -> f64 {
    -(ctx.casimir() * &ctx.heat_mean(t1 + t3)).trace().re
}

/// `[z(t1 - q, t3) - z(t1, t3 + q)] / q`, the exact mean of the deformation
/// estimator at strip area `q`.
pub fn deformation_oracle(ctx: &GroupContext, t1: f64, t3: f64, q: f64) -> f64 {
    (lobe_trace(ctx, t1 + t3 - q) - lobe_trace(ctx, t1 + t3 + q)) / q
}

/// `(1/D) tr exp(kappa a / 2)`.
pub fn wilson_oracle(ctx: &GroupContext, area: f64) -> f64 {
    lobe_trace(ctx, area) / ctx.matrix_dim() as f64
}

/// Independent lobe holonomies `(h1, h2)`: Brownian motions run for times
/// `t1` and `t3`.
pub fn oracle_sample_figure_eight<R: Rng + ?Sized>(
    ctx: &GroupContext,
    t1: f64,
    t3: f64,
    steps: usize,
    rng: &mut R,
) -> (GroupElement, GroupElement) {
    let h1 = ctx.brownian_sample(t1, steps, rng);
    let h2 = ctx.brownian_sample(t3, steps, rng);
    (h1, h2)
}

/// `E[Re tr(h2 h1)]` from the lobe sampler, without any noise field.
pub fn oracle_figure_eight_mean(ctx: &GroupContext, t1: f64, t3: f64, steps: usize, n: u64, seed: u64) -> Result<MCEstimate> {
    if !(t1 >= 0.0 && t3 >= 0.0) || steps == 0 {
        return Err(Error::InvalidArgument("lobe areas must be non-negative and steps positive".into()));
    }
    let acc = run_replicas(n, seed, 1, |rs, out| {
        let mut r = rng::stream(rs, &[0x4C4F_4245]);
        let (h1, h2) = oracle_sample_figure_eight(ctx, t1, t3, steps, &mut r);
        out[0] = (&h2 * &h1).trace().re;
        Ok(())
    })?;
    Ok(acc[0].estimate())
}

// ------------------------------------------------------------ Wilson loops

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilsonRow {
    pub rect: [f64; 4],
    pub area: f64,
    pub oracle: f64,
    pub report: ComparisonReport,
}

/// Counter-clockwise boundary of `[x0, x1] x [y0, y1]` starting at `(x0, y0)`.
pub fn rect_boundary(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<TamePath> {
    TamePath::new(vec![
        Segment::Forward(HorizontalCurve::flat(x0, x1, y0)?),
        Segment::Vertical { x: x1, y0, y1 },
        Segment::Backward(HorizontalCurve::flat(x0, x1, y1)?),
        Segment::Vertical { x: x0, y0: y1, y1: y0 },
    ])
}

/// `E[(1/D) Re tr //(dR)]` for each rectangle `[x0, x1] x [y0, y1]`, all on
/// the same replicas, against `(1/D) tr exp(kappa |R| / 2)`.
pub fn wilson_decay(setup: &Setup, rects: &[[f64; 4]], n: u64, seed: u64, threshold: f64) -> Result<Vec<WilsonRow>> {
    let paths = rects
        .iter()
        .map(|r| {
            for (v, name) in [(r[0], "x0"), (r[1], "x1")] {
                setup.window.node_x(v, name)?;
            }
            for (v, name) in [(r[2], "y0"), (r[3], "y1")] {
                setup.window.node_y(v, name)?;
            }
            if !(r[0] < r[1] && r[2] < r[3]) {
                return Err(Error::InvalidArgument("rectangle corners out of order".into()));
            }
            rect_boundary(r[0], r[1], r[2], r[3])
        })
        .collect::<Result<Vec<_>>>()?;
    let d = setup.dim() as f64;
    let acc = run_replicas(n, seed, paths.len(), |rs, out| {
        let field = setup.field(rs)?;
        for (o, p) in out.iter_mut().zip(&paths) {
            *o = transport_tame(&field, p, setup.substeps)?.trace().re / d;
        }
        Ok(())
    })?;
    Ok(rects
        .iter()
        .zip(&acc)
        .map(|(r, a)| {
            let area = (r[1] - r[0]) * (r[3] - r[2]);
            let oracle = wilson_oracle(&setup.ctx, area);
            WilsonRow { rect: *r, area, oracle, report: compare(a.estimate(), MCEstimate::exact(oracle), threshold) }
        })
        .collect())
}

// ------------------------------------------------------------ MM equation

fn crossing_edges(graph: &TameGraph) -> Result<[usize; 4]> {
    graph
        .crossing()
        .map(|c| c.edges)
        .ok_or_else(|| Error::InvalidGraph("graph has no crossing descriptor".into()))
}

fn require_invariant(setup: &Setup, graph: &TameGraph, u: &WilsonFunctional, seed: u64) -> Result<()> {
    let c = graph.crossing().ok_or_else(|| Error::InvalidGraph("graph has no crossing descriptor".into()))?;
    if u.edge_count() != graph.edges().len() {
        return Err(Error::InvalidArgument("functional and graph disagree on the edge count".into()));
    }
    let mut r = rng::stream(seed, &[0x4741_5547]);
    if !check_extended_gauge_invariance(&setup.ctx, u, c, 16, &mut r) {
        return Err(Error::InvalidArgument("functional is not extended gauge invariant at the crossing".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MmLhs {
    /// `E[Re sum_xi grad^{e1}_xi grad^{e2}_xi U]`.
    pub lhs: MCEstimate,
    /// `E[Re U]` on the same replicas.
    pub wilson: MCEstimate,
}

/// The crossing side of the loop equation, evaluated exactly on each
/// replica's holonomies.
pub fn mm_lhs(setup: &Setup, graph: &TameGraph, u: &WilsonFunctional, n: u64, seed: u64) -> Result<MmLhs> {
    require_invariant(setup, graph, u, seed)?;
    let [e1, e2, _, _] = crossing_edges(graph)?;
    let acc = run_replicas(n, seed, 2, |rs, out| {
        let field = setup.field(rs)?;
        let omega = holonomies(&field, graph, setup.substeps)?;
        out[0] = u.grad_dot(&setup.ctx, &omega, e1, e2).re;
        out[1] = u.eval(&omega).re;
        Ok(())
    })?;
    Ok(MmLhs { lhs: acc[0].estimate(), wilson: acc[1].estimate() })
}

/// True iff some segment of `path` runs through the interior of the union of `cells`.
fn crosses_interior(path: &TamePath, cells: &HashSet<(usize, usize)>, w: &GridWindow) -> bool {
    let col = |x: f64| ((x - w.x_min) / w.hx()).round() as isize;
    let row = |y: f64| ((y - w.y_min) / w.hy()).round() as isize;
    let has = |i: isize, j: isize| i >= 0 && j >= 0 && cells.contains(&(i as usize, j as usize));
    path.segments().iter().any(|s| match s {
        Segment::Vertical { x, y0, y1 } => {
            let k = col(*x);
            let (a, b) = (row(y0.min(*y1)), row(y0.max(*y1)));
            (a..b).any(|j| has(k - 1, j) && has(k, j))
        }
        Segment::Forward(c) | Segment::Backward(c) => {
            let br = c.breaks();
            c.heights().iter().enumerate().any(|(p, h)| {
                let r = row(*h);
                (col(br[p])..col(br[p + 1])).any(|i| has(i, r - 1) && has(i, r))
            })
        }
    })
}

/// Checks that `q` sits in the first quadrant under `e1` and that neither `q`
/// nor its reflection meets the interior of any edge.
fn check_insertion_region(setup: &Setup, graph: &TameGraph, q: &GridRegion) -> Result<GridRegion> {
    let w = &setup.window;
    if q.is_empty() {
        return Err(Error::InvalidArgument("insertion region is empty".into()));
    }
    let [e1, ..] = crossing_edges(graph)?;
    let e1_path = &graph.edges()[e1].path;
    let (sx, sy) = e1_path.initial();
    let (tx, ty) = e1_path.terminal();
    if sx != 0.0 || sy != 0.0 || ty != 0.0 || tx <= 0.0 {
        return Err(Error::InvalidGraph("e1 must run along the positive x-axis from the crossing".into()));
    }
    let (c0, r0, c_end) = (w.origin_col(), w.origin_row(), w.node_x(tx, "e1 end")?);
    for (i, j) in q.cells() {
        if i < c0 || j < r0 || i >= c_end {
            return Err(Error::InvalidArgument("insertion region must lie in the first quadrant above e1".into()));
        }
    }
    let rq = q.reflect(w)?;
    for reg in [q, &rq] {
        let cells: HashSet<_> = reg.cells().collect();
        for e in graph.edges() {
            if crosses_interior(&e.path, &cells, w) {
                return Err(Error::InvalidArgument(format!("edge {} crosses the insertion region", e.name)));
            }
        }
    }
    Ok(rq)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub area: f64,
    /// `-(1/|Q|) E[Re(grad^{e2}_{f(Q)} U - grad^{e2}_{f(RQ)} U)]`.
    pub reflected: MCEstimate,
    /// `-(1/|Q|) E[Re(grad^{e2}_{f(Q)} U + grad^{e4}_{f(RQ)} U)]`.
    pub extended: MCEstimate,
    /// The crossing side on the same replicas.
    pub lhs: MCEstimate,
    /// Replica-wise `lhs - reflected` and `lhs - extended`.
    pub diff_reflected: MCEstimate,
    pub diff_extended: MCEstimate,
}

impl Insertion {
    pub fn reports(&self, threshold: f64) -> [ComparisonReport; 2] {
        [
            compare_paired(self.lhs, self.reflected, self.diff_reflected, threshold),
            compare_paired(self.lhs, self.extended, self.diff_extended, threshold),
        ]
    }
}

/// Both region-insertion forms of the crossing term, paired with [`mm_lhs`].
pub fn mm_insertion(setup: &Setup, graph: &TameGraph, u: &WilsonFunctional, q: &GridRegion, n: u64, seed: u64) -> Result<Insertion> {
    require_invariant(setup, graph, u, seed)?;
    let rq = check_insertion_region(setup, graph, q)?;
    let [e1, e2, _, e4] = crossing_edges(graph)?;
    let area = q.area(&setup.window);
    let acc = run_replicas(n, seed, 5, |rs, out| {
        let field = setup.field(rs)?;
        let omega = holonomies(&field, graph, setup.substeps)?;
        let fq = field.f_region(q)?;
        let frq = field.f_region(&rq)?;
        let d2 = u.grad_edge(&omega, e2, &fq).re;
        let d2r = u.grad_edge(&omega, e2, &frq).re;
        let d4r = u.grad_edge(&omega, e4, &frq).re;
        let lhs = u.grad_dot(&setup.ctx, &omega, e1, e2).re;
        let refl = -(d2 - d2r) / area;
        let ext = -(d2 + d4r) / area;
        out.copy_from_slice(&[lhs, refl, ext, lhs - refl, lhs - ext]);
        Ok(())
    })?;
    let e: Vec<_> = acc.iter().map(|a| a.estimate()).collect();
    Ok(Insertion { area, lhs: e[0], reflected: e[1], extended: e[2], diff_reflected: e[3], diff_extended: e[4] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deformation {
    pub eps: f64,
    pub q: f64,
    /// `E[Re U(G+) - Re U(G-)] / q`.
    pub estimate: MCEstimate,
    /// Exact finite-eps mean of `estimate`.
    pub oracle: f64,
    /// Reflected insertion estimator on `Q_eps`, same replicas.
    pub insertion: MCEstimate,
    /// Replica-wise `estimate - insertion`; its mean is the gap to the eps -> 0 limit.
    pub gap: MCEstimate,
}

/// The deformation quotient for the figure-eight with `e2` (resp. `e4`) bent
/// around `Q_eps = [0, eps] x [0, h2]` (resp. its reflection).
pub fn mm_deformation(setup: &Setup, fig: &FigureEight, eps: f64, n: u64, seed: u64) -> Result<Deformation> {
    let w = &setup.window;
    if eps < w.hx() - 1e-12 {
        return Err(Error::InvalidArgument("eps is below one grid column".into()));
    }
    let (graph, u) = fig.build(w, setup.dim())?;
    let plus = fig.deformed(w, Deform::Plus, eps)?;
    let minus = fig.deformed(w, Deform::Minus, eps)?;
    let qreg = GridRegion::rect(w, 0.0, eps, 0.0, fig.h2)?;
    let rq = check_insertion_region(setup, &graph, &qreg)?;
    let q = eps * fig.h2;
    let (p2, m4) = (&plus.edges()[fig8::E2].path, &minus.edges()[fig8::E4].path);
    let acc = run_replicas(n, seed, 3, |rs, out| {
        let field = setup.field(rs)?;
        let omega = holonomies(&field, &graph, setup.substeps)?;
        let mut op = omega.clone();
        op.values[fig8::E2] = transport_tame(&field, p2, setup.substeps)?;
        let mut om = omega.clone();
        om.values[fig8::E4] = transport_tame(&field, m4, setup.substeps)?;
        let d = (u.eval(&op).re - u.eval(&om).re) / q;
        let fq = field.f_region(&qreg)?;
        let frq = field.f_region(&rq)?;
        let ins = -(u.grad_edge(&omega, fig8::E2, &fq).re - u.grad_edge(&omega, fig8::E2, &frq).re) / q;
        out.copy_from_slice(&[d, ins, d - ins]);
        Ok(())
    })?;
    Ok(Deformation {
        eps,
        q,
        estimate: acc[0].estimate(),
        oracle: deformation_oracle(&setup.ctx, fig.t1(), fig.t3(), q),
        insertion: acc[1].estimate(),
        gap: acc[2].estimate(),
    })
}

// ---------------------------------------------------- integration by parts

fn check_grid_aligned(eta: &PerturbationOneForm, w: &GridWindow) -> Result<()> {
    eta.check_support(w)?;
    for (r, _) in eta.terms() {
        w.node_x(r.x0, "eta x0")?;
        w.node_x(r.x1, "eta x1")?;
        w.node_y(r.y0, "eta y0")?;
        w.node_y(r.y1, "eta y1")?;
    }
    Ok(())
}

/// Whether `eta(x, y(x))` is nonzero anywhere along a horizontal piece of `path`.
fn eta_touches(path: &TamePath, eta: &PerturbationOneForm, w: &GridWindow) -> bool {
    path.segments().iter().any(|s| match s {
        Segment::Vertical { .. } => false,
        Segment::Forward(c) | Segment::Backward(c) => {
            let n = ((c.x_end() - c.x_start()) / w.hx()).round() as usize;
            (0..n).any(|i| {
                let x = c.x_start() + (i as f64 + 0.5) * w.hx();
                eta.eta(x, c.height_at(x)).max_abs() > 0.0
            })
        }
    })
}

/// `E[sum_sigma Re grad^sigma_{zeta(sigma)} U]` against `E[Re U <f, eta_y>]`,
/// both on the same replicas.
pub fn ibp_check(
    setup: &Setup,
    graph: &TameGraph,
    u: &WilsonFunctional,
    eta: &PerturbationOneForm,
    n: u64,
    seed: u64,
    threshold: f64,
) -> Result<ComparisonReport> {
    let w = &setup.window;
    check_grid_aligned(eta, w)?;
    let m = setup.ctx.algebra_dim();
    let density: Vec<f64> = eta.cell_integrals(w, m).iter().map(|v| v / w.cell_area()).collect();
    let active: Vec<usize> = (0..graph.edges().len())
        .filter(|&e| u.involves(e) && eta_touches(&graph.edges()[e].path, eta, w))
        .collect();
    let acc = run_replicas(n, seed, 3, |rs, out| {
        let field = setup.field(rs)?;
        let omega = holonomies(&field, graph, setup.substeps)?;
        let mut lhs = 0.0;
        for &e in &active {
            let z = zeta(&field, &graph.edges()[e].path, eta, setup.substeps)?;
            lhs += u.grad_edge(&omega, e, &z).re;
        }
        let pairing: f64 = field.values().iter().zip(&density).map(|(a, b)| a * b).sum();
        let rhs = u.eval(&omega).re * pairing;
        out.copy_from_slice(&[lhs, rhs, lhs - rhs]);
        Ok(())
    })?;
    Ok(compare_paired(acc[0].estimate(), acc[1].estimate(), acc[2].estimate(), threshold))
}

// ------------------------------------------------------------- Girsanov

/// Cylinder functional of a field: `h -> psi(<h(B), xi>)`.
#[derive(Clone, Debug)]
pub enum Psi {
    Linear { region: GridRegion, xi: AlgebraElement },
    /// `cos(scale * <h(B), xi>)`.
    Cos { region: GridRegion, xi: AlgebraElement, scale: f64 },
}

impl Psi {
    fn parts(&self) -> (&GridRegion, &AlgebraElement) {
        match self {
            Psi::Linear { region, xi } | Psi::Cos { region, xi, .. } => (region, xi),
        }
    }

    fn apply(&self, s: f64) -> f64 {
        match self {
            Psi::Linear { .. } => s,
            Psi::Cos { scale, .. } => (scale * s).cos(),
        }
    }
}

/// x-dependent gauge `g(x) = exp(x X)`, frozen at column midpoints.
#[derive(Clone, Debug)]
pub enum XGauge {
    Identity,
    Exp(AlgebraElement),
}

impl XGauge {
    pub fn at(&self, ctx: &GroupContext, x: f64) -> GroupElement {
        match self {
            XGauge::Identity => ctx.identity(),
            XGauge::Exp(a) => ctx.exp_map(&a.scale_re(x)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GirsanovReport {
    /// Shifted side `E[psi(f^g - Ad_{g^-1} alpha)]` against the reweighted side
    /// `E[psi(f^g) exp(-<f, alpha> - |alpha|^2 / 2)]`.
    pub comparison: ComparisonReport,
    /// Exact value of the shifted side for linear `psi`, and its comparison
    /// with the reweighted side.
    pub analytic: Option<f64>,
    pub analytic_report: Option<ComparisonReport>,
    /// Weighted KS test of the reweighted linear statistic against its exact
    /// Gaussian law (linear `psi` only).
    pub ks: Option<KsResult>,
}

/// Cameron-Martin shift by a cellwise constant density `alpha` (coordinates
/// per cell, layout of [`NoiseField::values`]), seen through the gauge `g`.
pub fn girsanov_check(setup: &Setup, psi: &Psi, alpha: &[f64], gauge: &XGauge, n: u64, seed: u64, threshold: f64) -> Result<GirsanovReport> {
    let w = &setup.window;
    let ctx = &setup.ctx;
    let m = ctx.algebra_dim();
    if alpha.len() != w.cells() * m {
        return Err(Error::InvalidArgument("alpha does not match the window".into()));
    }
    let (region, xi) = psi.parts();
    if region.is_empty() {
        return Err(Error::InvalidArgument("psi region is empty".into()));
    }
    let ca = w.cell_area();
    // <Ad_{g^-1} h, xi> = <h, Ad_g xi>, so each cell contributes h_c . v_c.
    let v: Vec<Vec<f64>> = (0..w.nx)
        .map(|i| ctx.coords(&ctx.adjoint_group(&gauge.at(ctx, 0.5 * (w.x_of(i) + w.x_of(i + 1))), xi)))
        .collect();
    let cells: Vec<(usize, usize)> = region.cells().collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let shift: f64 = cells.iter().map(|&(i, j)| ca * dot(&alpha[(i * w.ny + j) * m..][..m], &v[i])).sum();
    let norm2: f64 = ca * alpha.iter().map(|a| a * a).sum::<f64>();
    let support: Vec<usize> = (0..w.cells()).filter(|c| alpha[c * m..(c + 1) * m].iter().any(|a| *a != 0.0)).collect();
    let samples = map_replicas(n, seed, |rs| {
        let field = setup.field(rs)?;
        let vals = field.values();
        let s: f64 = cells.iter().map(|&(i, j)| dot(&vals[(i * w.ny + j) * m..][..m], &v[i])).sum();
        let pair: f64 = support.iter().map(|&c| dot(&vals[c * m..(c + 1) * m], &alpha[c * m..(c + 1) * m])).sum();
        let weight = (-pair - 0.5 * norm2).exp();
        Ok((psi.apply(s - shift), psi.apply(s) * weight, s, weight))
    })?;
    let (mut l, mut r, mut d) = (Accumulator::new(), Accumulator::new(), Accumulator::new());
    for (a, b, _, _) in &samples {
        l.push(*a);
        r.push(*b);
        d.push(a - b);
    }
    let comparison = compare_paired(l.estimate(), r.estimate(), d.estimate(), threshold);
    let (analytic, analytic_report, ks) = match psi {
        Psi::Linear { .. } => {
            let exact = -shift;
            let rep = compare(MCEstimate::exact(exact), r.estimate(), threshold);
            let sd = (region.area(w)).sqrt();
            let law = Normal::new(exact, sd).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            let xs: Vec<f64> = samples.iter().map(|t| t.2).collect();
            let ws: Vec<f64> = samples.iter().map(|t| t.3).collect();
            // reweighted, s is distributed as s - shift under the plain measure
            let ks = ks_weighted(&xs, &ws, |x| law.cdf(x))?;
            (Some(exact), Some(rep), Some(ks))
        }
        Psi::Cos { .. } => (None, None, None),
    };
    Ok(GirsanovReport { comparison, analytic, analytic_report, ks })
}

// ------------------------------------------------------- loop expansion

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopRow {
    pub t: f64,
    pub area: f64,
    /// `|| E[g_t] - exp(kappa a / 2) ||_max` and the largest entry stderr.
    pub mean_residual: f64,
    pub mean_sigma: f64,
    pub mean_pass: bool,
    /// `|| E[g_t] - I - kappa a / 2 ||_max`, with the largest entry stderr.
    pub drift_residual: MCEstimate,
    /// `sqrt(E || r - E r ||_F^2)` for `r = g_t - I + fhat(Q_t) - kappa a / 2`.
    pub centered_l2: MCEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopScan {
    pub rows: Vec<LoopRow>,
    pub drift_slope: Option<SlopeFit>,
    pub centered_slope: Option<SlopeFit>,
}

fn push_entries(m: &CMat, out: &mut [f64]) {
    for (k, z) in m.as_slice().iter().enumerate() {
        out[2 * k] = z.re;
        out[2 * k + 1] = z.im;
    }
}

/// Entrywise mean matrix and the largest complex-entry stderr.
fn matrix_mean(acc: &[Accumulator], d: usize) -> (CMat, f64) {
    let mut sig: f64 = 0.0;
    let mut mean = CMat::zeros(d);
    for k in 0..d * d {
        let (re, im) = (acc[2 * k].estimate(), acc[2 * k + 1].estimate());
        mean.as_mut_slice()[k] = crate::C64::new(re.mean, im.mean);
        sig = sig.max(re.stderr.hypot(im.stderr));
    }
    (mean, sig)
}

/// `g_t = //(top of Q_t)^{-1}` for `Q_t = [0, t] x [0, 1]`, with residuals
/// against the Casimir drift.
pub fn loop_expansion_scan(setup: &Setup, ts: &[f64], n: u64, seed: u64, threshold: f64) -> Result<LoopScan> {
    let w = &setup.window;
    w.node_y(1.0, "top")?;
    let d = setup.dim();
    let ctx = &setup.ctx;
    let mut curves = Vec::with_capacity(ts.len());
    for &t in ts {
        w.node_x(t, "t")?;
        if t < 0.0 {
            return Err(Error::InvalidArgument("t must be non-negative".into()));
        }
        curves.push(if t > 0.0 {
            Some((HorizontalCurve::flat(0.0, t, 1.0)?, GridRegion::rect(w, 0.0, t, 0.0, 1.0)?))
        } else {
            None
        });
    }
    let per = 4 * d * d + 1;
    let drift: Vec<CMat> = ts.iter().map(|t| ctx.casimir().scale_re(0.5 * t)).collect();
    let acc = run_replicas(n, seed, per * ts.len(), |rs, out| {
        let field = setup.field(rs)?;
        for (k, c) in curves.iter().enumerate() {
            let o = &mut out[k * per..(k + 1) * per];
            let Some((curve, q)) = c else {
                push_entries(&CMat::identity(d), &mut o[..2 * d * d]);
                continue;
            };
            let g = transport_horizontal(&field, curve, setup.substeps)?.adjoint();
            let mut r = &g - &CMat::identity(d);
            r += &field.f_hat_region(q)?;
            r.axpy(-1.0, &drift[k]);
            push_entries(&g, &mut o[..2 * d * d]);
            push_entries(&r, &mut o[2 * d * d..4 * d * d]);
            o[4 * d * d] = r.frobenius().powi(2);
        }
        Ok(())
    })?;
    let mut rows = Vec::new();
    for (k, &t) in ts.iter().enumerate() {
        let a = &acc[k * per..(k + 1) * per];
        let (eg, sig) = matrix_mean(&a[..2 * d * d], d);
        let (er, _) = matrix_mean(&a[2 * d * d..4 * d * d], d);
        let mean_residual = eg.dist_max(&ctx.heat_mean(t));
        let mut lin = CMat::identity(d);
        lin += &drift[k];
        let sq = a[4 * d * d].estimate();
        let centered = (sq.mean - er.frobenius().powi(2)).max(0.0);
        let l2 = centered.sqrt();
        let l2_se = if l2 > 0.0 { sq.stderr / (2.0 * l2) } else { 0.0 };
        let tiny = 1e-12 * (1.0 + eg.max_abs());
        rows.push(LoopRow {
            t,
            area: t,
            mean_residual,
            mean_sigma: sig,
            mean_pass: if sig > 0.0 { mean_residual <= threshold * sig } else { mean_residual <= tiny },
            drift_residual: MCEstimate { mean: eg.dist_max(&lin), stderr: sig, n },
            centered_l2: MCEstimate { mean: l2, stderr: l2_se, n },
        });
    }
    let pos: Vec<&LoopRow> = rows.iter().filter(|r| r.area > 0.0).collect();
    let fit = |f: &dyn Fn(&LoopRow) -> f64| -> Option<SlopeFit> {
        let xs: Vec<f64> = pos.iter().map(|r| r.area).collect();
        let ys: Vec<f64> = pos.iter().map(|r| f(r)).collect();
        fit_loglog(&xs, &ys).ok()
    };
    let drift_slope = fit(&|r| r.drift_residual.mean);
    let centered_slope = fit(&|r| r.centered_l2.mean);
    Ok(LoopScan { rows, drift_slope, centered_slope })
}

// ------------------------------------------- pathwise perturbation identity

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshRow {
    pub hx: f64,
    pub hy: f64,
    pub residual: MCEstimate,
    /// Replica-wise `residual(previous, coarser mesh) - residual(this mesh)`.
    pub decrease: Option<MCEstimate>,
}

/// Residual of the perturbed-transport identity on `levels` meshes, coarsest
/// first. Each replica samples `fine` once and coarsens it, so all meshes see
/// the same realization; transport uses one sub-step per column.
pub fn perturbation_mesh_scan(
    ctx: Arc<GroupContext>,
    fine: GridWindow,
    levels: usize,
    curve: &HorizontalCurve,
    eta: &PerturbationOneForm,
    n: u64,
    seed: u64,
) -> Result<Vec<MeshRow>> {
    if levels == 0 {
        return Err(Error::InvalidArgument("need at least one mesh".into()));
    }
    let mut windows = vec![fine];
    for _ in 1..levels {
        let c = *windows.last().unwrap();
        windows.push(GridWindow { nx: c.nx / 2, ny: c.ny / 2, ..c });
    }
    windows.reverse();
    for w in &windows {
        check_grid_aligned(eta, w)?;
        curve.slabs(w)?;
    }
    let acc = run_replicas(n, seed, 2 * levels, |rs, out| {
        let mut f = NoiseField::sample(ctx.clone(), fine, rs)?;
        let mut res = vec![0.0; levels];
        for k in (0..levels).rev() {
            res[k] = perturbed_transport_identity_residual(&f, curve, eta, 1)?;
            if k > 0 {
                f = f.coarsen()?;
            }
        }
        for k in 0..levels {
            out[k] = res[k];
            out[levels + k] = if k > 0 { res[k - 1] - res[k] } else { 0.0 };
        }
        Ok(())
    })?;
    Ok(windows
        .iter()
        .enumerate()
        .map(|(k, w)| MeshRow {
            hx: w.hx(),
            hy: w.hy(),
            residual: acc[k].estimate(),
            decrease: (k > 0).then(|| acc[levels + k].estimate()),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::Rect;

    #[test]
    fn oracle_values() {
        let su2 = GroupContext::new(GroupKind::SU2).unwrap();
        let u1 = GroupContext::new(GroupKind::U1).unwrap();
        assert!((mm_rhs_oracle(&su2, 0.5, 0.5) - 3.0 * (-0.75f64).exp()).abs() < 1e-12);
        assert!((mm_rhs_oracle(&u1, 0.5, 0.5) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((mm_rhs_oracle(&su2, 0.0, 0.0) - 3.0).abs() < 1e-12);
        let fin = deformation_oracle(&su2, 0.5, 0.5, 0.1);
        let expect = (2.0 * (-0.675f64).exp() - 2.0 * (-0.825f64).exp()) / 0.1;
        assert!((fin - expect).abs() < 1e-12);
        assert!((wilson_oracle(&su2, 1.0) - (-0.75f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn replicas_do_not_depend_on_block_scheduling() {
        let run = || run_replicas(3000, 9, 1, |rs, o| {
            o[0] = (rs % 1000) as f64;
            Ok(())
        });
        let a = run().unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(run).unwrap();
        assert_eq!(a[0].estimate(), b[0].estimate());
        assert_eq!(a[0].n(), 3000);
    }

    #[test]
    fn zero_noise_insertion_vanishes() {
        let mut s = Setup::benchmark(GroupKind::SU2).unwrap();
        s.zero_noise = true;
        let (g, u) = FigureEight::from_areas(0.5, 0.5).build(&s.window, 2).unwrap();
        let q = GridRegion::rect(&s.window, 0.0, 0.2, 0.0, 1.0).unwrap();
        let r = mm_insertion(&s, &g, &u, &q, 10, 1).unwrap();
        assert_eq!(r.reflected.mean, 0.0);
        assert_eq!(r.extended.mean, 0.0);
        assert_eq!(r.reflected.stderr, 0.0);
    }

    #[test]
    fn insertion_region_checks() {
        let s = Setup::benchmark(GroupKind::U1).unwrap();
        let (g, u) = FigureEight::from_areas(0.5, 0.5).build(&s.window, 1).unwrap();
        let bad = GridRegion::rect(&s.window, -0.1, 0.1, 0.0, 1.0).unwrap();
        assert!(mm_insertion(&s, &g, &u, &bad, 10, 1).is_err());
        let (g2, _) = FigureEight::from_areas(0.25, 0.5).build(&s.window, 1).unwrap();
        let wide = GridRegion::rect(&s.window, 0.0, 0.5, 0.0, 1.0).unwrap();
        assert!(mm_insertion(&s, &g2, &u, &wide, 10, 1).is_err());
    }

    #[test]
    fn constant_functional_has_zero_crossing_term() {
        let s = Setup::benchmark(GroupKind::SU2).unwrap();
        let (g, _) = FigureEight::from_areas(0.5, 0.5).build(&s.window, 2).unwrap();
        let c = WilsonFunctional::constant(2, 6, crate::C64::new(1.0, 0.0));
        let r = mm_lhs(&s, &g, &c, 64, 3).unwrap();
        assert_eq!((r.lhs.mean, r.lhs.stderr), (0.0, 0.0));
    }

    #[test]
    fn ibp_trivial_cases() {
        let s = Setup::benchmark(GroupKind::SU2).unwrap();
        let (g, u) = FigureEight::from_areas(0.5, 0.5).build(&s.window, 2).unwrap();
        let zero = PerturbationOneForm::zero(&s.ctx);
        let r = ibp_check(&s, &g, &u, &zero, 50, 2, 3.0).unwrap();
        assert!(r.pass && r.lhs.mean == 0.0 && r.rhs.mean == 0.0);
        let xi = s.ctx.basis()[0].clone();
        let eta = PerturbationOneForm::reflected_pair(&s.ctx, Rect::new(0.0, 0.1, 0.0, 1.0).unwrap(), &xi);
        let one = WilsonFunctional::constant(2, 6, crate::C64::new(1.0, 0.0));
        let r = ibp_check(&s, &g, &one, &eta, 2000, 2, 3.0).unwrap();
        assert_eq!(r.lhs.mean, 0.0);
        assert!(r.pass);
        let off = PerturbationOneForm::reflected_pair(&s.ctx, Rect::new(0.0, 0.12, 0.0, 1.0).unwrap(), &xi);
        assert!(ibp_check(&s, &g, &u, &off, 10, 2, 3.0).is_err());
    }

    #[test]
    fn girsanov_without_shift_is_identical() {
        let s = Setup::benchmark(GroupKind::SU2).unwrap();
        let region = GridRegion::rect(&s.window, 0.0, 0.2, 0.0, 1.0).unwrap();
        let psi = Psi::Cos { region, xi: s.ctx.basis()[0].clone(), scale: 1.0 };
        let alpha = vec![0.0; s.window.cells() * 3];
        let r = girsanov_check(&s, &psi, &alpha, &XGauge::Identity, 500, 4, 3.0).unwrap();
        assert_eq!(r.comparison.z, 0.0);
        assert_eq!(r.comparison.lhs, r.comparison.rhs);
    }

    #[test]
    fn loop_scan_at_zero_is_identity() {
        let s = Setup::benchmark(GroupKind::SU2).unwrap();
        let r = loop_expansion_scan(&s, &[0.0], 20, 1, 3.0).unwrap();
        assert_eq!(r.rows[0].mean_residual, 0.0);
        assert_eq!(r.rows[0].centered_l2.mean, 0.0);
        assert!(r.rows[0].mean_pass);
        assert!(loop_expansion_scan(&s, &[0.03], 20, 1, 3.0).is_err());
    }

    #[test]
    fn lobe_sampler_trivial_times() {
        let ctx = GroupContext::new(GroupKind::SU2).unwrap();
        let mut r = rng::stream(1, &[]);
        let (a, b) = oracle_sample_figure_eight(&ctx, 0.0, 0.0, 10, &mut r);
        assert_eq!(a, ctx.identity());
        assert_eq!(b, ctx.identity());
    }
}
