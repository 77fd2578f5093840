//! Graphs of staircase paths, holonomy configurations, discrete gauges and
//! trace-word functionals with exact insertion derivatives.

use crate::error::{Error, Result};
use crate::lie::{AlgebraElement, GroupContext, GroupElement};
use crate::linalg::{CMat, C64};
use crate::noise::{GridWindow, NoiseField};
use crate::transport::{transport_tame, HorizontalCurve, Segment, TamePath};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

const VERTEX_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub name: String,
    pub path: TamePath,
}

/// Four edges leaving a crossing vertex, counterclockwise from the positive
/// x half-axis, and the areas of the faces between consecutive edges
/// (`faces[k]` lies between `edges[k]` and `edges[k + 1]`; `None` is infinite).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub vertex: (f64, f64),
    pub edges: [usize; 4],
    pub faces: [Option<f64>; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TameGraph {
    edges: Vec<Edge>,
    crossing: Option<Crossing>,
}

/// Elementary pieces of an edge image on a grid, in integer node coordinates.
fn raster(path: &TamePath, w: &GridWindow) -> Result<(Vec<((usize, usize), (usize, usize))>, Vec<(usize, usize)>)> {
    let mut links = Vec::new();
    let mut nodes = Vec::new();
    let vertical = |x: usize, a: usize, b: usize, links: &mut Vec<_>, nodes: &mut Vec<_>| {
        let (lo, hi) = (a.min(b), a.max(b));
        for r in lo..hi {
            links.push(((x, r), (x, r + 1)));
        }
        for r in lo..=hi {
            nodes.push((x, r));
        }
    };
    for seg in path.segments() {
        match seg {
            Segment::Vertical { x, y0, y1 } => {
                let c = w.node_x(*x, "vertical abscissa")?;
                let (a, b) = (w.node_y(*y0, "vertical end")?, w.node_y(*y1, "vertical end")?);
                vertical(c, a, b, &mut links, &mut nodes);
            }
            Segment::Forward(cv) | Segment::Backward(cv) => {
                let br = cv.breaks();
                let hs = cv.heights();
                for (k, win) in br.windows(2).enumerate() {
                    let (c0, c1) = (w.node_x(win[0], "curve abscissa")?, w.node_x(win[1], "curve abscissa")?);
                    let r = w.node_y(hs[k], "curve height")?;
                    for c in c0..c1 {
                        links.push(((c, r), (c + 1, r)));
                    }
                    nodes.extend((c0..=c1).map(|c| (c, r)));
                    if k + 1 < hs.len() {
                        let r2 = w.node_y(hs[k + 1], "curve height")?;
                        vertical(c1, r, r2, &mut links, &mut nodes);
                    }
                }
            }
        }
    }
    Ok((links, nodes))
}

impl TameGraph {
    /// Graph without validation; see [`Self::validate`].
    pub fn new_unchecked(edges: Vec<Edge>, crossing: Option<Crossing>) -> Self {
        TameGraph { edges, crossing }
    }

    /// Builds and validates on the grid of `window`.
    pub fn new(edges: Vec<Edge>, crossing: Option<Crossing>, window: &GridWindow) -> Result<Self> {
        let g = TameGraph { edges, crossing };
        g.validate(window)?;
        Ok(g)
    }

    /// Distinct edges may meet only at endpoints, edge names are unique and the
    /// crossing edges leave the vertex along the four half-axes.
    pub fn validate(&self, window: &GridWindow) -> Result<()> {
        let mut names = HashSet::new();
        for e in &self.edges {
            if !names.insert(e.name.as_str()) {
                return Err(Error::InvalidGraph(format!("duplicate edge name `{}`", e.name)));
            }
        }
        let mut rasters = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let (links, nodes) = raster(&e.path, window)?;
            let ends: HashSet<(usize, usize)> = [e.path.initial(), e.path.terminal()]
                .iter()
                .map(|p| Ok((window.node_x(p.0, "vertex")?, window.node_y(p.1, "vertex")?)))
                .collect::<Result<_>>()?;
            let link_set: HashSet<_> = links.iter().map(|&(a, b)| if a <= b { (a, b) } else { (b, a) }).collect();
            if link_set.len() != links.len() {
                return Err(Error::InvalidGraph(format!("edge `{}` retraces itself", e.name)));
            }
            let interior: HashSet<_> = nodes.into_iter().filter(|n| !ends.contains(n)).collect();
            rasters.push((link_set, interior, ends));
        }
        for i in 0..rasters.len() {
            for j in (i + 1)..rasters.len() {
                let (li, ni, ei) = &rasters[i];
                let (lj, nj, ej) = &rasters[j];
                if li.intersection(lj).next().is_some() {
                    return Err(Error::InvalidGraph(format!(
                        "edges `{}` and `{}` share a grid segment",
                        self.edges[i].name, self.edges[j].name
                    )));
                }
                if ni.intersection(nj).next().is_some()
                    || ni.intersection(ej).next().is_some()
                    || nj.intersection(ei).next().is_some()
                {
                    return Err(Error::InvalidGraph(format!(
                        "edges `{}` and `{}` meet away from their endpoints",
                        self.edges[i].name, self.edges[j].name
                    )));
                }
            }
        }
        if let Some(c) = &self.crossing {
            let dirs = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
            for (k, &ei) in c.edges.iter().enumerate() {
                let e = self.edges.get(ei).ok_or_else(|| Error::InvalidGraph("crossing edge index out of range".into()))?;
                let p0 = e.path.initial();
                if (p0.0 - c.vertex.0).abs() > VERTEX_TOL || (p0.1 - c.vertex.1).abs() > VERTEX_TOL {
                    return Err(Error::InvalidGraph(format!("crossing edge `{}` does not start at the vertex", e.name)));
                }
                let first = &e.path.segments()[0];
                let p1 = first_step(first);
                let d = (p1.0 - p0.0, p1.1 - p0.1);
                let along = d.0 * dirs[k].0 + d.1 * dirs[k].1;
                let across = d.0 * dirs[k].1 - d.1 * dirs[k].0;
                if !(along > 0.0 && across.abs() < VERTEX_TOL) {
                    return Err(Error::InvalidGraph(format!("crossing edge `{}` is not on half-axis {k}", e.name)));
                }
            }
            for a in c.faces.iter().flatten() {
                if !(*a > 0.0 && a.is_finite()) {
                    return Err(Error::InvalidGraph("face areas must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn crossing(&self) -> Option<&Crossing> {
        self.crossing.as_ref()
    }

    pub fn edge_index(&self, name: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.name == name)
    }

    /// `V(G)`: the distinct edge endpoints, in order of first appearance.
    pub fn vertices(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for e in &self.edges {
            for p in [e.path.initial(), e.path.terminal()] {
                if !out.iter().any(|q| (q.0 - p.0).abs() <= VERTEX_TOL && (q.1 - p.1).abs() <= VERTEX_TOL) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn vertex_index(&self, p: (f64, f64)) -> Option<usize> {
        self.vertices()
            .iter()
            .position(|q| (q.0 - p.0).abs() <= VERTEX_TOL && (q.1 - p.1).abs() <= VERTEX_TOL)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// A point just after the start of a segment, giving its initial direction.
fn first_step(seg: &Segment) -> (f64, f64) {
    match seg {
        Segment::Vertical { x, y0, y1 } => (*x, y0 + (y1 - y0).signum()),
        Segment::Forward(c) => (c.x_start() + 1.0, c.start().1),
        Segment::Backward(c) => (c.x_end() - 1.0, c.end().1),
    }
}

/// `omega`: one group element per edge, in graph order.
#[derive(Clone, Debug, PartialEq)]
pub struct HolonomyAssignment {
    pub values: Vec<GroupElement>,
}

impl HolonomyAssignment {
    pub fn identity(ctx: &GroupContext, edges: usize) -> Self {
        HolonomyAssignment { values: vec![ctx.identity(); edges] }
    }

    pub fn random<R: Rng + ?Sized>(ctx: &GroupContext, edges: usize, rng: &mut R) -> Self {
        let values = (0..edges).map(|_| ctx.exp_map(&ctx.sample_algebra_gaussian(2.0, rng))).collect();
        HolonomyAssignment { values }
    }

    /// Value on the reversed edge: the exact inverse `omega(e)*`.
    pub fn reversed(&self, edge: usize) -> GroupElement {
        self.values[edge].adjoint()
    }
}

/// Stochastic holonomies of all edges on one field.
pub fn holonomies(field: &NoiseField, graph: &TameGraph, substeps: usize) -> Result<HolonomyAssignment> {
    let values = graph
        .edges()
        .iter()
        .map(|e| transport_tame(field, &e.path, substeps))
        .collect::<Result<Vec<_>>>()?;
    Ok(HolonomyAssignment { values })
}

/// `u`: one group element per vertex, in the order of [`TameGraph::vertices`].
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteGauge {
    pub values: Vec<GroupElement>,
}

impl DiscreteGauge {
    pub fn identity(ctx: &GroupContext, vertices: usize) -> Self {
        DiscreteGauge { values: vec![ctx.identity(); vertices] }
    }

    /// `u_{x0,k}`: `k` at vertex `v`, identity elsewhere.
    pub fn single(ctx: &GroupContext, vertices: usize, v: usize, k: GroupElement) -> Self {
        let mut g = Self::identity(ctx, vertices);
        g.values[v] = k;
        g
    }

    pub fn inverse(&self) -> Self {
        DiscreteGauge { values: self.values.iter().map(|g| g.adjoint()).collect() }
    }
}

/// `omega^u(sigma) = u(sigma_f)^{-1} omega(sigma) u(sigma_i)`.
pub fn apply_gauge(graph: &TameGraph, omega: &HolonomyAssignment, u: &DiscreteGauge) -> Result<HolonomyAssignment> {
    let verts = graph.vertices();
    if u.values.len() != verts.len() {
        return Err(Error::InvalidArgument(format!("gauge has {} values for {} vertices", u.values.len(), verts.len())));
    }
    if omega.values.len() != graph.edges().len() {
        return Err(Error::InvalidArgument("assignment does not match the graph".into()));
    }
    let values = graph
        .edges()
        .iter()
        .zip(&omega.values)
        .map(|(e, w)| {
            let i = graph.vertex_index(e.path.initial()).expect("endpoint is a vertex");
            let f = graph.vertex_index(e.path.terminal()).expect("endpoint is a vertex");
            &(&u.values[f].adjoint() * w) * &u.values[i]
        })
        .collect();
    Ok(HolonomyAssignment { values })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Letter {
    /// `omega(edge)` or its inverse.
    Edge { edge: usize, inv: bool },
    /// A fixed matrix, produced by differentiating a word.
    Const(CMat),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: C64,
    pub word: Vec<Letter>,
}

/// `U(omega) = sum coeff * tr(product of letters)`, letters multiplied left to right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilsonFunctional {
    dim: usize,
    edges: usize,
    terms: Vec<Term>,
}

/// Where an extra matrix goes when a letter is differentiated.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Side {
    /// `omega -> omega X` (and `omega^{-1} -> -X omega^{-1}`).
    Left,
    /// `omega -> X omega` (and `omega^{-1} -> -omega^{-1} X`).
    Right,
}

impl WilsonFunctional {
    pub fn new(dim: usize, edges: usize, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            for l in &t.word {
                match l {
                    Letter::Edge { edge, .. } if *edge >= edges => {
                        return Err(Error::InvalidArgument(format!("word refers to missing edge {edge}")));
                    }
                    Letter::Const(m) if m.n() != dim => {
                        return Err(Error::InvalidArgument("constant letter has the wrong size".into()));
                    }
                    _ => {}
                }
            }
        }
        Ok(WilsonFunctional { dim, edges, terms })
    }

    /// A single trace word with coefficient 1, edges given as `(index, inverse)`.
    pub fn trace_word(dim: usize, edges: usize, word: &[(usize, bool)]) -> Result<Self> {
        let word = word.iter().map(|&(edge, inv)| Letter::Edge { edge, inv }).collect();
        Self::new(dim, edges, vec![Term { coeff: C64::new(1.0, 0.0), word }])
    }

    pub fn constant(dim: usize, edges: usize, c: C64) -> Self {
        WilsonFunctional { dim, edges, terms: vec![Term { coeff: c / dim as f64, word: vec![] }] }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn edge_count(&self) -> usize {
        self.edges
    }

    pub fn involves(&self, edge: usize) -> bool {
        self.terms.iter().any(|t| t.word.iter().any(|l| matches!(l, Letter::Edge { edge: e, .. } if *e == edge)))
    }

    fn letter_value(&self, l: &Letter, omega: &HolonomyAssignment) -> CMat {
        match l {
            Letter::Edge { edge, inv: false } => omega.values[*edge].clone(),
            Letter::Edge { edge, inv: true } => omega.values[*edge].adjoint(),
            Letter::Const(m) => m.clone(),
        }
    }

    /// Trace of a word where letter `k` is replaced by `pre[k] * value * post[k]`.
    fn trace_with(&self, word: &[Letter], omega: &HolonomyAssignment, edits: &[(usize, CMat, bool)]) -> C64 {
        let mut acc = CMat::identity(self.dim);
        for (k, l) in word.iter().enumerate() {
            let mut v = self.letter_value(l, omega);
            for (pos, m, before) in edits {
                if *pos == k {
                    v = if *before { m * &v } else { &v * m };
                }
            }
            acc = &acc * &v;
        }
        acc.trace()
    }

    pub fn eval(&self, omega: &HolonomyAssignment) -> C64 {
        self.terms.iter().map(|t| t.coeff * self.trace_with(&t.word, omega, &[])).sum()
    }

    /// Insertion edits for differentiating letter `k` of `word` in direction `x`.
    fn edit(word: &[Letter], k: usize, x: &CMat, side: Side) -> Option<(usize, CMat, bool)> {
        match (&word[k], side) {
            (Letter::Edge { inv: false, .. }, Side::Left) => Some((k, x.clone(), false)),
            (Letter::Edge { inv: true, .. }, Side::Left) => Some((k, -x, true)),
            (Letter::Edge { inv: false, .. }, Side::Right) => Some((k, x.clone(), true)),
            (Letter::Edge { inv: true, .. }, Side::Right) => Some((k, -x, false)),
            (Letter::Const(_), _) => None,
        }
    }

    fn positions(word: &[Letter], edge: usize) -> Vec<usize> {
        word.iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Letter::Edge { edge: e, .. } if *e == edge))
            .map(|(k, _)| k)
            .collect()
    }

    fn derivative(&self, omega: &HolonomyAssignment, edge: usize, x: &CMat, side: Side) -> C64 {
        let mut total = C64::new(0.0, 0.0);
        for t in &self.terms {
            for k in Self::positions(&t.word, edge) {
                let e = Self::edit(&t.word, k, x, side).expect("edge letter");
                total += t.coeff * self.trace_with(&t.word, omega, &[e]);
            }
        }
        total
    }

    /// `d/dt U(omega with omega(sigma) e^{tX})`, exactly.
    pub fn grad_edge(&self, omega: &HolonomyAssignment, edge: usize, x: &AlgebraElement) -> C64 {
        self.derivative(omega, edge, x, Side::Left)
    }

    /// `d/dt U(omega with e^{tX} omega(sigma))`, exactly.
    pub fn grad_right(&self, omega: &HolonomyAssignment, edge: usize, x: &AlgebraElement) -> C64 {
        self.derivative(omega, edge, x, Side::Right)
    }

    /// `grad^{s1}_X grad^{s2}_Y U`: the inner derivative acts on `s2` with `Y`.
    pub fn grad_grad(&self, omega: &HolonomyAssignment, s1: usize, x: &CMat, s2: usize, y: &CMat) -> C64 {
        let mut total = C64::new(0.0, 0.0);
        for t in &self.terms {
            for k1 in Self::positions(&t.word, s1) {
                for k2 in Self::positions(&t.word, s2) {
                    let inner = Self::edit(&t.word, k2, y, Side::Left).unwrap();
                    let outer = Self::edit(&t.word, k1, x, Side::Left).unwrap();
                    // edits apply in order, so a shared letter becomes
                    // omega X Y, or Y X omega^{-1} when inverted
                    let edits = [outer, inner];
                    total += t.coeff * self.trace_with(&t.word, omega, &edits);
                }
            }
        }
        total
    }

    /// `sum_xi grad^{s1}_xi grad^{s2}_xi U` over an orthonormal basis.
    pub fn grad_dot(&self, ctx: &GroupContext, omega: &HolonomyAssignment, s1: usize, s2: usize) -> C64 {
        ctx.basis().iter().map(|xi| self.grad_grad(omega, s1, xi, s2, xi)).sum()
    }

    /// The functional `omega -> grad^{edge}_X U(omega)` as a new word sum.
    pub fn derivative_functional(&self, edge: usize, x: &AlgebraElement) -> WilsonFunctional {
        let mut terms = Vec::new();
        for t in &self.terms {
            for k in Self::positions(&t.word, edge) {
                let mut word = t.word.clone();
                let (coeff, at) = match word[k] {
                    Letter::Edge { inv: false, .. } => (t.coeff, k + 1),
                    _ => (-t.coeff, k),
                };
                word.insert(at, Letter::Const(x.clone()));
                terms.push(Term { coeff, word });
            }
        }
        WilsonFunctional { dim: self.dim, edges: self.edges, terms }
    }
}

/// True iff `U` is unchanged under `omega(e1), omega(e3) -> omega x` and
/// `omega(e2), omega(e4) -> omega y` on `probes` random configurations.
pub fn check_extended_gauge_invariance<R: Rng + ?Sized>(
    ctx: &GroupContext,
    u: &WilsonFunctional,
    crossing: &Crossing,
    probes: usize,
    rng: &mut R,
) -> bool {
    let [e1, e2, e3, e4] = crossing.edges;
    for _ in 0..probes {
        let omega = HolonomyAssignment::random(ctx, u.edge_count(), rng);
        let x = ctx.exp_map(&ctx.sample_algebra_gaussian(2.0, rng));
        let y = ctx.exp_map(&ctx.sample_algebra_gaussian(2.0, rng));
        let mut moved = omega.clone();
        for (e, g) in [(e1, &x), (e3, &x), (e2, &y), (e4, &y)] {
            moved.values[e] = &moved.values[e] * g;
        }
        let (a, b) = (u.eval(&omega), u.eval(&moved));
        if (a - b).norm() > 1e-10 * (1.0 + a.norm()) {
            return false;
        }
    }
    true
}

/// Lobe rectangles `[0, w1] x [0, h2]` and `[-w3, 0] x [-h4, 0]` touching at 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureEight {
    pub w1: f64,
    pub h2: f64,
    pub w3: f64,
    pub h4: f64,
}

/// Edge indices in the figure-eight graph.
pub mod fig8 {
    pub const E1: usize = 0;
    pub const E2: usize = 1;
    pub const E3: usize = 2;
    pub const E4: usize = 3;
    pub const A: usize = 4;
    pub const B: usize = 5;
}

/// Which vertical crossing edge is pushed into the first quadrant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Deform {
    /// `e2` becomes `0 -> (eps, 0) -> (eps, h2) -> (0, h2)`.
    Plus,
    /// `e4` becomes `0 -> (eps, 0) -> (eps, -h4) -> (0, -h4)`.
    Minus,
}

impl FigureEight {
    /// Lobes of heights 1 with the given areas.
    pub fn from_areas(t1: f64, t3: f64) -> Self {
        FigureEight { w1: t1, h2: 1.0, w3: t3, h4: 1.0 }
    }

    pub fn t1(&self) -> f64 {
        self.w1 * self.h2
    }

    pub fn t3(&self) -> f64 {
        self.w3 * self.h4
    }

    fn edges(&self, deform: Option<(Deform, f64)>) -> Result<Vec<Edge>> {
        let FigureEight { w1, h2, w3, h4 } = *self;
        if !(w1 > 0.0 && h2 > 0.0 && w3 > 0.0 && h4 > 0.0) {
            return Err(Error::InvalidArgument("lobe sides must be positive".into()));
        }
        let e = |name: &str, segs: Vec<Segment>| -> Result<Edge> { Ok(Edge { name: name.into(), path: TamePath::new(segs)? }) };
        let bent = |eps: f64, h: f64| -> Result<Vec<Segment>> {
            Ok(vec![
                Segment::Forward(HorizontalCurve::flat(0.0, eps, 0.0)?),
                Segment::Vertical { x: eps, y0: 0.0, y1: h },
                Segment::Backward(HorizontalCurve::flat(0.0, eps, h)?),
            ])
        };
        let e2 = match deform {
            Some((Deform::Plus, eps)) => bent(eps, h2)?,
            _ => vec![Segment::Vertical { x: 0.0, y0: 0.0, y1: h2 }],
        };
        let e4 = match deform {
            Some((Deform::Minus, eps)) => bent(eps, -h4)?,
            _ => vec![Segment::Vertical { x: 0.0, y0: 0.0, y1: -h4 }],
        };
        Ok(vec![
            e("e1", vec![Segment::Forward(HorizontalCurve::flat(0.0, w1, 0.0)?)])?,
            e("e2", e2)?,
            e("e3", vec![Segment::Backward(HorizontalCurve::flat(-w3, 0.0, 0.0)?)])?,
            e("e4", e4)?,
            e(
                "a",
                vec![
                    Segment::Vertical { x: w1, y0: 0.0, y1: h2 },
                    Segment::Backward(HorizontalCurve::flat(0.0, w1, h2)?),
                ],
            )?,
            e(
                "b",
                vec![
                    Segment::Backward(HorizontalCurve::flat(-w3, 0.0, -h4)?),
                    Segment::Vertical { x: -w3, y0: -h4, y1: 0.0 },
                ],
            )?,
        ])
    }

    fn crossing(&self) -> Crossing {
        Crossing {
            vertex: (0.0, 0.0),
            edges: [fig8::E1, fig8::E2, fig8::E3, fig8::E4],
            faces: [Some(self.t1()), None, Some(self.t3()), None],
        }
    }

    /// `U = tr(omega(b) omega(e4) omega(e2)^{-1} omega(a) omega(e1) omega(e3)^{-1})`.
    pub fn functional(dim: usize) -> WilsonFunctional {
        use fig8::*;
        WilsonFunctional::trace_word(dim, 6, &[(B, false), (E4, false), (E2, true), (A, false), (E1, false), (E3, true)])
            .expect("static word")
    }

    /// The validated graph and its loop functional.
    pub fn build(&self, window: &GridWindow, dim: usize) -> Result<(TameGraph, WilsonFunctional)> {
        let g = TameGraph::new(self.edges(None)?, Some(self.crossing()), window)?;
        Ok((g, Self::functional(dim)))
    }

    /// The graph with one vertical crossing edge bent around `[0, eps]`. Its
    /// image overlaps `e1`, so it is not validated.
    pub fn deformed(&self, window: &GridWindow, deform: Deform, eps: f64) -> Result<TameGraph> {
        window.node_x(eps, "eps")?;
        if !(eps > 0.0 && eps < self.w1) {
            return Err(Error::InvalidArgument("eps must lie in (0, w1)".into()));
        }
        Ok(TameGraph::new_unchecked(self.edges(Some((deform, eps)))?, Some(self.crossing())))
    }
}

/// Map edge names to values, for reporting.
pub fn named(graph: &TameGraph, omega: &HolonomyAssignment) -> HashMap<String, GroupElement> {
    graph.edges().iter().zip(&omega.values).map(|(e, w)| (e.name.clone(), w.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::GroupKind;
    use rand::rngs::SmallRng;
    use rand::SeedableRng;

    fn window() -> GridWindow {
        GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.5).unwrap()
    }

    #[test]
    fn figure_eight_builds_and_validates() {
        let (g, u) = FigureEight::from_areas(0.5, 0.5).build(&window(), 2).unwrap();
        assert_eq!(g.vertices().len(), 5);
        let ctx = GroupContext::new(GroupKind::SU2).unwrap();
        let omega = HolonomyAssignment::identity(&ctx, 6);
        assert!((u.eval(&omega) - C64::new(2.0, 0.0)).norm() < 1e-15);
        let mut rng = SmallRng::seed_from_u64(1);
        assert!(check_extended_gauge_invariance(&ctx, &u, g.crossing().unwrap(), 100, &mut rng));
        let t1 = WilsonFunctional::trace_word(2, 6, &[(fig8::E1, false)]).unwrap();
        assert!(!check_extended_gauge_invariance(&ctx, &t1, g.crossing().unwrap(), 100, &mut rng));
        let c = WilsonFunctional::constant(2, 6, C64::new(3.0, 0.0));
        assert!(check_extended_gauge_invariance(&ctx, &c, g.crossing().unwrap(), 100, &mut rng));
    }

    #[test]
    fn off_grid_or_overlapping_graphs_rejected() {
        assert!(FigureEight::from_areas(0.52, 0.5).build(&window(), 2).is_err());
        let w = window();
        let c = HorizontalCurve::flat(0.0, 0.3, 0.5).unwrap();
        let d = HorizontalCurve::flat(0.1, 0.4, 0.5).unwrap();
        let edges = vec![
            Edge { name: "p".into(), path: TamePath::forward(c) },
            Edge { name: "q".into(), path: TamePath::forward(d) },
        ];
        assert!(matches!(TameGraph::new(edges, None, &w), Err(Error::InvalidGraph(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let (g, _) = FigureEight { w1: 0.35, h2: 1.0, w3: 0.15, h4: 0.5 }.build(&window(), 2).unwrap();
        let s = g.to_json().unwrap();
        assert_eq!(TameGraph::from_json(&s).unwrap(), g);
    }

    #[test]
    fn gauge_round_trip_and_invariance() {
        let ctx = GroupContext::new(GroupKind::SUN(3)).unwrap();
        let (g, u) = FigureEight::from_areas(0.5, 0.5).build(&window(), 3).unwrap();
        let mut rng = SmallRng::seed_from_u64(4);
        let omega = HolonomyAssignment::random(&ctx, 6, &mut rng);
        let gauge = DiscreteGauge { values: (0..5).map(|_| ctx.exp_map(&ctx.sample_algebra_gaussian(1.0, &mut rng))).collect() };
        let moved = apply_gauge(&g, &omega, &gauge).unwrap();
        let back = apply_gauge(&g, &moved, &gauge.inverse()).unwrap();
        for (a, b) in back.values.iter().zip(&omega.values) {
            assert!(a.dist_max(b) < 1e-13);
        }
        assert!((u.eval(&moved) - u.eval(&omega)).norm() < 1e-10);
    }

    #[test]
    fn grad_dot_at_identity() {
        let su2 = GroupContext::new(GroupKind::SU2).unwrap();
        let u = FigureEight::functional(2);
        let omega = HolonomyAssignment::identity(&su2, 6);
        assert!((u.grad_dot(&su2, &omega, fig8::E1, fig8::E2) - C64::new(3.0, 0.0)).norm() < 1e-13);
        let u1 = GroupContext::new(GroupKind::U1).unwrap();
        let omega = HolonomyAssignment::identity(&u1, 6);
        let v = FigureEight::functional(1).grad_dot(&u1, &omega, fig8::E1, fig8::E2);
        assert!((v - C64::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn derivative_functional_matches_grad_edge() {
        let ctx = GroupContext::new(GroupKind::SU2).unwrap();
        let mut rng = SmallRng::seed_from_u64(8);
        let u = FigureEight::functional(2);
        let xi = ctx.basis()[0].clone();
        let d = u.derivative_functional(fig8::E2, &xi);
        for _ in 0..10 {
            let omega = HolonomyAssignment::random(&ctx, 6, &mut rng);
            assert!((d.eval(&omega) - u.grad_edge(&omega, fig8::E2, &xi)).norm() < 1e-12);
        }
    }
}
