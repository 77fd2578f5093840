//! Lie-algebra valued white noise on a rectangular grid window.
//!
//! Cell values are stored as basis coordinates. Cell `(i, j)` is column `i`
//! (left to right) and row `j` (bottom to top). Each cell draws from its own
//! keyed stream, so a realization does not depend on evaluation order.

use crate::error::{Error, Result};
use crate::lie::{AlgebraElement, GroupContext, GroupKind};
use crate::linalg::CMat;
use crate::rng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

/// Default cap on the number of grid cells in one field.
pub const DEFAULT_CELL_BUDGET: usize = 1 << 22;

const GRID_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridWindow {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, nx: usize, ny: usize) -> Result<Self> {
        let w = GridWindow { x_min, x_max, y_min, y_max, nx, ny };
        w.validate()?;
        Ok(w)
    }

    /// Window with the given cell sizes; the extents must be multiples of them.
    pub fn with_spacing(x_min: f64, x_max: f64, y_min: f64, y_max: f64, hx: f64, hy: f64) -> Result<Self> {
        if !(hx > 0.0 && hy > 0.0) {
            return Err(Error::InvalidWindow("cell sizes must be positive".into()));
        }
        let nx = whole((x_max - x_min) / hx, "x extent / h_x", hx)?;
        let ny = whole((y_max - y_min) / hy, "y extent / h_y", hy)?;
        Self::new(x_min, x_max, y_min, y_max, nx, ny)
    }

    fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidWindow("non-finite bounds".into()));
        }
        if !(self.x_min < 0.0 && 0.0 < self.x_max && self.y_min < 0.0 && 0.0 < self.y_max) {
            return Err(Error::InvalidWindow("the origin must lie strictly inside the window".into()));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidWindow("cell counts must be positive".into()));
        }
        whole(-self.x_min / self.hx(), "x_min", self.hx())
            .map_err(|_| Error::InvalidWindow("x = 0 is not a grid line".into()))?;
        whole(-self.y_min / self.hy(), "y_min", self.hy())
            .map_err(|_| Error::InvalidWindow("y = 0 is not a grid line".into()))?;
        Ok(())
    }

    pub fn hx(&self) -> f64 {
        (self.x_max - self.x_min) / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_max - self.y_min) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    /// Column index of the node line x = 0.
    pub fn origin_col(&self) -> usize {
        (-self.x_min / self.hx()).round() as usize
    }

    /// Row index of the node line y = 0.
    pub fn origin_row(&self) -> usize {
        (-self.y_min / self.hy()).round() as usize
    }

    /// Node index of abscissa `x`, which must be a grid line inside the window.
    pub fn node_x(&self, x: f64, name: &str) -> Result<usize> {
        let k = node_index(x, self.x_min, self.hx(), name)?;
        if k > self.nx {
            return Err(Error::OutsideWindow(format!("{name} = {x} is outside [{}, {}]", self.x_min, self.x_max)));
        }
        Ok(k)
    }

    pub fn node_y(&self, y: f64, name: &str) -> Result<usize> {
        let k = node_index(y, self.y_min, self.hy(), name)?;
        if k > self.ny {
            return Err(Error::OutsideWindow(format!("{name} = {y} is outside [{}, {}]", self.y_min, self.y_max)));
        }
        Ok(k)
    }

    pub fn x_of(&self, col: usize) -> f64 {
        self.x_min + col as f64 * self.hx()
    }

    pub fn y_of(&self, row: usize) -> f64 {
        self.y_min + row as f64 * self.hy()
    }

    /// Same extent with every cell split `factor x factor`.
    pub fn refined(&self, factor: usize) -> GridWindow {
        GridWindow { nx: self.nx * factor, ny: self.ny * factor, ..*self }
    }
}

fn whole(v: f64, name: &str, spacing: f64) -> Result<usize> {
    let r = v.round();
    if r < 0.0 || (v - r).abs() > GRID_TOL * v.abs().max(1.0) {
        return Err(Error::OffGrid { name: name.to_string(), value: v, spacing });
    }
    Ok(r as usize)
}

fn node_index(v: f64, origin: f64, h: f64, name: &str) -> Result<usize> {
    let k = (v - origin) / h;
    if k < -GRID_TOL {
        return Err(Error::OutsideWindow(format!("{name} = {v} is below the window")));
    }
    whole(k, name, h).map_err(|_| Error::OffGrid { name: name.to_string(), value: v, spacing: h })
}

/// Grid-aligned set of cells, stored as per-column row intervals `[lo, hi)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridRegion {
    intervals: Vec<(usize, usize, usize)>,
}

impl GridRegion {
    pub fn empty() -> Self {
        GridRegion::default()
    }

    /// Region from `(col, row_lo, row_hi)` triples; intervals must not overlap.
    pub fn from_intervals(window: &GridWindow, intervals: Vec<(usize, usize, usize)>) -> Result<Self> {
        for &(c, lo, hi) in &intervals {
            if c >= window.nx || lo > hi || hi > window.ny {
                return Err(Error::OutsideWindow(format!("column interval ({c}, {lo}, {hi})")));
            }
        }
        let mut sorted = intervals.clone();
        sorted.sort_unstable();
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 && w[1].1 < w[0].2 {
                return Err(Error::InvalidArgument("overlapping region intervals".into()));
            }
        }
        Ok(GridRegion { intervals: sorted.into_iter().filter(|t| t.1 < t.2).collect() })
    }

    /// The rectangle `[x0, x1] x [y0, y1]` with grid-line sides.
    pub fn rect(window: &GridWindow, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let (c0, c1) = (window.node_x(x0, "x0")?, window.node_x(x1, "x1")?);
        let (r0, r1) = (window.node_y(y0, "y0")?, window.node_y(y1, "y1")?);
        if c0 > c1 || r0 > r1 {
            return Err(Error::InvalidArgument("rectangle corners out of order".into()));
        }
        Ok(GridRegion { intervals: (c0..c1).filter(|_| r1 > r0).map(|c| (c, r0, r1)).collect() })
    }

    pub fn intervals(&self) -> &[(usize, usize, usize)] {
        &self.intervals
    }

    pub fn cell_count(&self) -> usize {
        self.intervals.iter().map(|t| t.2 - t.1).sum()
    }

    pub fn area(&self, window: &GridWindow) -> f64 {
        self.cell_count() as f64 * window.cell_area()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.intervals.iter().flat_map(|&(c, lo, hi)| (lo..hi).map(move |r| (c, r)))
    }

    /// Disjoint union; fails if the two regions share a cell.
    pub fn union(&self, other: &GridRegion, window: &GridWindow) -> Result<Self> {
        let mut all = self.intervals.clone();
        all.extend_from_slice(&other.intervals);
        GridRegion::from_intervals(window, all)
    }

    /// Mirror image across the x-axis.
    pub fn reflect(&self, window: &GridWindow) -> Result<Self> {
        let j0 = window.origin_row() as i64;
        let mut out = Vec::with_capacity(self.intervals.len());
        for &(c, lo, hi) in &self.intervals {
            let nlo = 2 * j0 - hi as i64;
            let nhi = 2 * j0 - lo as i64;
            if nlo < 0 || nhi > window.ny as i64 {
                return Err(Error::OutsideWindow("reflected region leaves the window".into()));
            }
            out.push((c, nlo as usize, nhi as usize));
        }
        GridRegion::from_intervals(window, out)
    }
}

/// Data that turns a field into the shifted view `Ad_{g(x_c)^{-1}}(f(c) - s_c)`.
#[derive(Clone, Debug)]
struct ShiftView {
    base: Arc<Vec<f64>>,
    /// Per column, the real matrix of `Ad_{g^{-1}}` in the basis (row-major).
    rot: Vec<f64>,
    /// Per cell, the coordinates of the subtracted deterministic integral.
    shift: Vec<f64>,
}

/// One realization of the noise on a window.
#[derive(Clone, Debug)]
pub struct NoiseField {
    ctx: Arc<GroupContext>,
    window: GridWindow,
    seed: u64,
    m: usize,
    /// Cell coordinates, cell `(i, j)` at offset `(i * ny + j) * m`.
    values: Vec<f64>,
    /// Column prefix sums over rows, `(i * (ny + 1) + j) * m`.
    prefix: Vec<f64>,
    cache: Arc<Vec<OnceLock<(usize, Arc<[f64]>)>>>,
    view: Option<ShiftView>,
    /// False for the diagnostic zero field: refinements are then deterministic.
    bridge: bool,
}

const DUMP_MAGIC: &[u8; 8] = b"YM2NOISE";
const DUMP_VERSION: u32 = 1;

impl NoiseField {
    /// Samples a field: every cell coordinate is N(0, |cell|).
    pub fn sample(ctx: Arc<GroupContext>, window: GridWindow, seed: u64) -> Result<Self> {
        Self::sample_with_budget(ctx, window, seed, DEFAULT_CELL_BUDGET)
    }

    pub fn sample_with_budget(
        ctx: Arc<GroupContext>,
        window: GridWindow,
        seed: u64,
        budget: usize,
    ) -> Result<Self> {
        window.validate()?;
        if window.cells() > budget {
            return Err(Error::MemoryBudget { cells: window.cells(), budget });
        }
        let m = ctx.algebra_dim();
        let sd = window.cell_area().sqrt();
        let mut values = vec![0.0; window.cells() * m];
        for (cell, chunk) in values.chunks_mut(m.max(1)).enumerate().take(window.cells()) {
            let mut r = rng::stream(seed, &[cell as u64, 0]);
            for v in chunk.iter_mut() {
                *v = sd * r.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self::assemble(ctx, window, seed, values, None))
    }

    /// The identically zero field, for diagnostics.
    pub fn zero(ctx: Arc<GroupContext>, window: GridWindow) -> Result<Self> {
        window.validate()?;
        let m = ctx.algebra_dim();
        let mut f = Self::assemble(ctx, window, 0, vec![0.0; window.cells() * m], None);
        f.bridge = false;
        Ok(f)
    }

    /// Field with prescribed cell coordinates (layout as in [`Self::cell_coords`]).
    /// Refinement draws from streams keyed by `seed`.
    pub fn from_cells(ctx: Arc<GroupContext>, window: GridWindow, seed: u64, values: Vec<f64>) -> Result<Self> {
        window.validate()?;
        if values.len() != window.cells() * ctx.algebra_dim() {
            return Err(Error::InvalidArgument("cell value array has the wrong length".into()));
        }
        Ok(Self::assemble(ctx, window, seed, values, None))
    }

    fn assemble(ctx: Arc<GroupContext>, window: GridWindow, seed: u64, values: Vec<f64>, view: Option<ShiftView>) -> Self {
        let m = ctx.algebra_dim();
        let (nx, ny) = (window.nx, window.ny);
        let mut prefix = vec![0.0; nx * (ny + 1) * m];
        for i in 0..nx {
            for j in 0..ny {
                for a in 0..m {
                    prefix[(i * (ny + 1) + j + 1) * m + a] =
                        prefix[(i * (ny + 1) + j) * m + a] + values[(i * ny + j) * m + a];
                }
            }
        }
        let cache = Arc::new((0..window.cells()).map(|_| OnceLock::new()).collect());
        NoiseField { ctx, window, seed, m, values, prefix, cache, view, bridge: true }
    }

    pub fn ctx(&self) -> &Arc<GroupContext> {
        &self.ctx
    }

    pub fn window(&self) -> &GridWindow {
        &self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algebra_dim(&self) -> usize {
        self.m
    }

    pub fn cell_coords(&self, col: usize, row: usize) -> &[f64] {
        let k = (col * self.window.ny + row) * self.m;
        &self.values[k..k + self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn check_region(&self, b: &GridRegion) -> Result<()> {
        for &(c, lo, hi) in b.intervals() {
            if c >= self.window.nx || hi > self.window.ny || lo > hi {
                return Err(Error::OutsideWindow(format!("column interval ({c}, {lo}, {hi})")));
            }
        }
        Ok(())
    }

    /// Adds `sign * f(column col, rows [lo, hi))` to `out`.
    #[inline]
    pub fn add_column_interval(&self, col: usize, lo: usize, hi: usize, sign: f64, out: &mut [f64]) {
        if lo >= hi {
            return;
        }
        let base = col * (self.window.ny + 1);
        let (a, b) = ((base + lo) * self.m, (base + hi) * self.m);
        for k in 0..self.m {
            out[k] += sign * (self.prefix[b + k] - self.prefix[a + k]);
        }
    }

    /// Adds `sign * fhat(column col, rows [lo, hi))`: rows under y = 0 flip sign.
    #[inline]
    pub fn add_column_interval_hat(&self, col: usize, lo: usize, hi: usize, sign: f64, out: &mut [f64]) {
        let j0 = self.window.origin_row();
        self.add_column_interval(col, lo.max(j0), hi, sign, out);
        self.add_column_interval(col, lo, hi.min(j0), -sign, out);
    }

    pub fn f_coords(&self, b: &GridRegion) -> Result<Vec<f64>> {
        self.check_region(b)?;
        let mut out = vec![0.0; self.m];
        for &(c, lo, hi) in b.intervals() {
            self.add_column_interval(c, lo, hi, 1.0, &mut out);
        }
        Ok(out)
    }

    pub fn f_hat_coords(&self, b: &GridRegion) -> Result<Vec<f64>> {
        self.check_region(b)?;
        let mut out = vec![0.0; self.m];
        for &(c, lo, hi) in b.intervals() {
            self.add_column_interval_hat(c, lo, hi, 1.0, &mut out);
        }
        Ok(out)
    }

    /// `f(B)`, the sum of the cell values in `B`.
    pub fn f_region(&self, b: &GridRegion) -> Result<AlgebraElement> {
        Ok(self.ctx.from_coords(&self.f_coords(b)?))
    }

    /// `fhat(B) = f(B in upper half) - f(B in lower half)`.
    pub fn f_hat_region(&self, b: &GridRegion) -> Result<AlgebraElement> {
        Ok(self.ctx.from_coords(&self.f_hat_coords(b)?))
    }

    /// Bridge split of one cell into `substeps` pieces, as basis coordinates
    /// (`substeps * m` values, piece-major). Pieces sum to the cell value.
    pub fn refine_coords(&self, col: usize, row: usize, substeps: usize) -> Arc<[f64]> {
        assert!(substeps >= 1, "substeps must be positive");
        let cell = col * self.window.ny + row;
        if let Some((s, v)) = self.cache[cell].get() {
            if *s == substeps {
                return v.clone();
            }
        }
        let v: Arc<[f64]> = self.compute_refinement(cell, substeps).into();
        if self.cache[cell].set((substeps, v.clone())).is_err() {
            if let Some((s, w)) = self.cache[cell].get() {
                if *s == substeps {
                    return w.clone();
                }
            }
        }
        v
    }

    fn compute_refinement(&self, cell: usize, s: usize) -> Vec<f64> {
        let m = self.m;
        let base_vals: &[f64] = match &self.view {
            Some(v) => &v.base[cell * m..(cell + 1) * m],
            None => &self.values[cell * m..(cell + 1) * m],
        };
        let mut out = vec![0.0; s * m];
        if s == 1 {
            out.copy_from_slice(&self.values[cell * m..(cell + 1) * m]);
            return out;
        }
        if self.bridge {
            let sd = (self.window.cell_area() / s as f64).sqrt();
            let mut r = rng::stream(self.seed, &[cell as u64, s as u64]);
            for k in 0..s {
                for a in 0..m {
                    out[k * m + a] = sd * r.sample::<f64, _>(StandardNormal);
                }
            }
        }
        for a in 0..m {
            let mean = (0..s).map(|k| out[k * m + a]).sum::<f64>() / s as f64;
            let target = base_vals[a] / s as f64;
            for k in 0..s {
                out[k * m + a] += target - mean;
            }
        }
        if let Some(v) = &self.view {
            let col = cell / self.window.ny;
            let rot = &v.rot[col * m * m..(col + 1) * m * m];
            let shift = &v.shift[cell * m..(cell + 1) * m];
            let mut tmp = vec![0.0; m];
            for k in 0..s {
                let piece = &mut out[k * m..(k + 1) * m];
                for a in 0..m {
                    tmp[a] = piece[a] - shift[a] / s as f64;
                }
                for a in 0..m {
                    piece[a] = (0..m).map(|b| rot[a * m + b] * tmp[b]).sum();
                }
            }
        }
        out
    }

    /// Bridge split of one cell as algebra elements.
    pub fn refine_column_strip(&self, col: usize, row: usize, substeps: usize) -> Vec<AlgebraElement> {
        self.refine_coords(col, row, substeps)
            .chunks(self.m.max(1))
            .take(substeps)
            .map(|c| self.ctx.from_coords(c))
            .collect()
    }

    /// Adds `sign * fhat` of the refined pieces of column `col`, rows `[lo, hi)`,
    /// into `out` (`substeps * m` values).
    pub fn add_refined_interval_hat(&self, col: usize, lo: usize, hi: usize, substeps: usize, sign: f64, out: &mut [f64]) {
        let j0 = self.window.origin_row();
        for row in lo..hi {
            let sg = if row < j0 { -sign } else { sign };
            let pieces = self.refine_coords(col, row, substeps);
            for (o, p) in out.iter_mut().zip(pieces.iter()) {
                *o += sg * p;
            }
        }
    }

    /// The shifted field `Ad_{g_col^{-1}}(f(c) - shift_c)`, where `g_inv_cols[i]`
    /// is `g^{-1}` frozen on column `i` and `shift` holds per-cell coordinates.
    /// Refinements are the transformed refinements of this field.
    pub fn shifted(&self, shift: &[f64], g_inv_cols: &[CMat]) -> Result<NoiseField> {
        let (m, nx, ny) = (self.m, self.window.nx, self.window.ny);
        if shift.len() != nx * ny * m || g_inv_cols.len() != nx {
            return Err(Error::InvalidArgument("shift data does not match the window".into()));
        }
        if self.view.is_some() {
            return Err(Error::InvalidArgument("a shifted view cannot be shifted again".into()));
        }
        let mut rot = Vec::with_capacity(nx * m * m);
        let id = CMat::identity(self.ctx.matrix_dim());
        for g in g_inv_cols {
            if *g == id {
                // exact identity, so a zero shift reproduces the field bit for bit
                rot.extend((0..m * m).map(|k| if k / m == k % m { 1.0 } else { 0.0 }));
            } else {
                rot.extend(self.ctx.ad_matrix(g));
            }
        }
        let mut values = vec![0.0; nx * ny * m];
        for i in 0..nx {
            let r = &rot[i * m * m..(i + 1) * m * m];
            for j in 0..ny {
                let k = (i * ny + j) * m;
                for a in 0..m {
                    values[k + a] = (0..m).map(|b| r[a * m + b] * (self.values[k + b] - shift[k + b])).sum();
                }
            }
        }
        let view = ShiftView { base: Arc::new(self.values.clone()), rot, shift: shift.to_vec() };
        let mut f = Self::assemble(self.ctx.clone(), self.window, self.seed, values, Some(view));
        f.bridge = self.bridge;
        Ok(f)
    }

    /// Sums 2x2 blocks of cells: the same realization on a mesh twice as coarse.
    pub fn coarsen(&self) -> Result<NoiseField> {
        let w = &self.window;
        if w.nx % 2 != 0 || w.ny % 2 != 0 || w.origin_col() % 2 != 0 || w.origin_row() % 2 != 0 {
            return Err(Error::InvalidWindow("window cannot be coarsened keeping the axes on grid lines".into()));
        }
        let cw = GridWindow { nx: w.nx / 2, ny: w.ny / 2, ..*w };
        let m = self.m;
        let mut values = vec![0.0; cw.cells() * m];
        for i in 0..cw.nx {
            for j in 0..cw.ny {
                let k = (i * cw.ny + j) * m;
                for (di, dj) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let src = self.cell_coords(2 * i + di, 2 * j + dj);
                    for a in 0..m {
                        values[k + a] += src[a];
                    }
                }
            }
        }
        let mut f = Self::assemble(self.ctx.clone(), cw, rng::mix(self.seed, &[0x434F_4152]), values, None);
        f.bridge = self.bridge;
        Ok(f)
    }

    /// Binary dump: magic, version, group, window, seed, then the cell
    /// coordinates row-major (row `j` outer, column `i` inner), little-endian.
    pub fn dump<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(DUMP_MAGIC)?;
        out.write_all(&DUMP_VERSION.to_le_bytes())?;
        let g = self.ctx.kind().to_string();
        out.write_all(&(g.len() as u32).to_le_bytes())?;
        out.write_all(g.as_bytes())?;
        let w = &self.window;
        for v in [w.x_min, w.x_max, w.y_min, w.y_max] {
            out.write_all(&v.to_le_bytes())?;
        }
        for v in [w.nx as u64, w.ny as u64, self.seed, self.m as u64] {
            out.write_all(&v.to_le_bytes())?;
        }
        for j in 0..w.ny {
            for i in 0..w.nx {
                for v in self.cell_coords(i, j) {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Reads a dump written by [`Self::dump`]. Shifted views restore as plain fields.
    pub fn restore<R: Read>(mut input: R) -> Result<NoiseField> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("not a noise field dump".into()));
        }
        let version = read_u32(&mut input)?;
        if version != DUMP_VERSION {
            return Err(Error::Format(format!("unsupported dump version {version}")));
        }
        let glen = read_u32(&mut input)? as usize;
        if glen > 64 {
            return Err(Error::Format("group name too long".into()));
        }
        let mut gname = vec![0u8; glen];
        input.read_exact(&mut gname)?;
        let kind: GroupKind = String::from_utf8(gname)
            .map_err(|_| Error::Format("group name is not UTF-8".into()))?
            .parse()?;
        let ctx = Arc::new(GroupContext::new(kind)?);
        let mut b = [0.0f64; 4];
        for v in b.iter_mut() {
            *v = f64::from_bits(read_u64(&mut input)?);
        }
        let nx = read_u64(&mut input)? as usize;
        let ny = read_u64(&mut input)? as usize;
        let seed = read_u64(&mut input)?;
        let m = read_u64(&mut input)? as usize;
        if m != ctx.algebra_dim() {
            return Err(Error::Format("coordinate count does not match the group".into()));
        }
        let window = GridWindow::new(b[0], b[1], b[2], b[3], nx, ny)?;
        if window.cells() > DEFAULT_CELL_BUDGET {
            return Err(Error::MemoryBudget { cells: window.cells(), budget: DEFAULT_CELL_BUDGET });
        }
        let mut values = vec![0.0; window.cells() * m];
        for j in 0..ny {
            for i in 0..nx {
                for a in 0..m {
                    values[(i * ny + j) * m + a] = f64::from_bits(read_u64(&mut input)?);
                }
            }
        }
        Ok(Self::assemble(ctx, window, seed, values, None))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn su2() -> Arc<GroupContext> {
        Arc::new(GroupContext::new(GroupKind::SU2).unwrap())
    }

    fn window() -> GridWindow {
        GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.5).unwrap()
    }

    #[test]
    fn window_validation() {
        assert!(GridWindow::new(0.0, 1.0, -1.0, 1.0, 10, 10).is_err());
        assert!(GridWindow::new(-0.33, 1.0, -1.0, 1.0, 10, 10).is_err());
        let w = window();
        assert_eq!((w.nx, w.ny, w.origin_col(), w.origin_row()), (20, 4, 10, 2));
        assert!(matches!(w.node_x(0.025, "t"), Err(Error::OffGrid { .. })));
        assert!(matches!(w.node_x(0.75, "t"), Err(Error::OutsideWindow(_))));
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let a = NoiseField::sample(su2(), window(), 11).unwrap();
        let b = NoiseField::sample(su2(), window(), 11).unwrap();
        let c = NoiseField::sample(su2(), window(), 12).unwrap();
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn memory_budget_enforced() {
        let r = NoiseField::sample_with_budget(su2(), window(), 1, 10);
        assert!(matches!(r, Err(Error::MemoryBudget { cells: 80, budget: 10 })));
    }

    #[test]
    fn region_queries() {
        let w = window();
        let f = NoiseField::sample(su2(), w, 3).unwrap();
        assert_eq!(f.f_coords(&GridRegion::empty()).unwrap(), vec![0.0; 3]);
        let up = GridRegion::rect(&w, 0.0, 0.2, 0.0, 1.0).unwrap();
        let down = GridRegion::rect(&w, 0.0, 0.2, -1.0, 0.0).unwrap();
        let both = GridRegion::rect(&w, 0.0, 0.2, -1.0, 1.0).unwrap();
        assert!((up.area(&w) - 0.2).abs() < 1e-15);
        let (fu, fd, fb) = (f.f_coords(&up).unwrap(), f.f_coords(&down).unwrap(), f.f_coords(&both).unwrap());
        let hb = f.f_hat_coords(&both).unwrap();
        for a in 0..3 {
            assert!((fb[a] - fu[a] - fd[a]).abs() < 1e-14);
            assert!((hb[a] - fu[a] + fd[a]).abs() < 1e-14);
        }
        assert_eq!(f.f_hat_coords(&up).unwrap(), fu);
        assert_eq!(up.reflect(&w).unwrap(), down);
        assert!(up.union(&both, &w).is_err());
    }

    #[test]
    fn refinement_sums_to_cell_and_is_cached() {
        let f = NoiseField::sample(su2(), window(), 5).unwrap();
        let pieces = f.refine_coords(3, 1, 16);
        for a in 0..3 {
            let s: f64 = (0..16).map(|k| pieces[k * 3 + a]).sum();
            assert!((s - f.cell_coords(3, 1)[a]).abs() < 1e-14);
        }
        assert_eq!(&*f.refine_coords(3, 1, 16), &*pieces);
        assert_eq!(&*f.refine_coords(3, 1, 1), f.cell_coords(3, 1));
        let again = NoiseField::sample(su2(), window(), 5).unwrap();
        assert_eq!(&*again.refine_coords(3, 1, 16), &*pieces);
    }

    #[test]
    fn zero_shift_view_is_identity() {
        let f = NoiseField::sample(su2(), window(), 5).unwrap();
        let ids = vec![CMat::identity(2); 20];
        let v = f.shifted(&vec![0.0; 80 * 3], &ids).unwrap();
        assert_eq!(v.values(), f.values());
        assert_eq!(&*v.refine_coords(2, 2, 4), &*f.refine_coords(2, 2, 4));
    }

    #[test]
    fn coarsen_preserves_region_values() {
        let w = GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.25).unwrap();
        let f = NoiseField::sample(su2(), w, 8).unwrap();
        let c = f.coarsen().unwrap();
        let rf = GridRegion::rect(&w, -0.2, 0.3, -0.5, 1.0).unwrap();
        let rc = GridRegion::rect(c.window(), -0.2, 0.3, -0.5, 1.0).unwrap();
        let (a, b) = (f.f_coords(&rf).unwrap(), c.f_coords(&rc).unwrap());
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-13);
        }
    }

    #[test]
    fn dump_restore_round_trip() {
        let f = NoiseField::sample(su2(), window(), 77).unwrap();
        let mut buf = Vec::new();
        f.dump(&mut buf).unwrap();
        let g = NoiseField::restore(buf.as_slice()).unwrap();
        assert_eq!(g.values(), f.values());
        assert_eq!(g.seed(), 77);
        assert_eq!(g.window(), f.window());
        assert!(NoiseField::restore(&buf[..20]).is_err());
    }
}
