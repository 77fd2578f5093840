//! Batch experiments: configuration, runners, result records and run manifests.
//!
//! Every experiment maps a validated [`ExperimentConfig`] to a list of
//! [`Record`]s. Records are a pure function of the configuration (no wall
//! times), so two runs with the same configuration serialize identically.
//! Timestamps and timings belong to the [`RunManifest`] only.

use crate::error::{Error, Result};
use crate::graph::{FigureEight, TameGraph, WilsonFunctional};
use crate::lie::{GroupContext, GroupKind};
use crate::linalg::C64;
use crate::noise::{GridRegion, GridWindow};
use crate::smooth::{self, Bound};
use crate::stats::{compare, fit_loglog, ComparisonReport, MCEstimate, SlopeFit};
use crate::transport::{HorizontalCurve, PerturbationOneForm, Rect};
use crate::verify::{self, Psi, Setup, XGauge};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

/// How replica seeds are derived; echoed into every manifest.
pub const SEED_DERIVATION: &str = "replica k of master seed s draws its field from splitmix64 chain \
mix(s, [0x5245504C, k]); cell (i, j) of that field is keyed by mix(replica_seed, [i, j])";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    WilsonDecay,
    MmCheck,
    IbpCheck,
    GirsanovCheck,
    LoopExpansion,
    SmoothLab,
    OracleVsField,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::WilsonDecay,
        Experiment::MmCheck,
        Experiment::IbpCheck,
        Experiment::GirsanovCheck,
        Experiment::LoopExpansion,
        Experiment::SmoothLab,
        Experiment::OracleVsField,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::WilsonDecay => "wilson-decay",
            Experiment::MmCheck => "mm-check",
            Experiment::IbpCheck => "ibp-check",
            Experiment::GirsanovCheck => "girsanov-check",
            Experiment::LoopExpansion => "loop-expansion",
            Experiment::SmoothLab => "smooth-lab",
            Experiment::OracleVsField => "oracle-vs-field",
        }
    }

    /// Sweep parameters this experiment understands.
    pub fn sweep_params(self) -> &'static [&'static str] {
        match self {
            Experiment::MmCheck | Experiment::SmoothLab => &["eps"],
            Experiment::LoopExpansion => &["t"],
            _ => &[],
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown experiment `{s}`")))
    }
}

// ------------------------------------------------------------------ config

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `u1`, `su2`, `sun:N` or `un:N`.
    pub group: String,
    /// Figure-eight lobe areas (lobe heights are 1).
    pub t1: f64,
    pub t3: f64,
    /// `[x_min, x_max, y_min, y_max]`.
    pub window: [f64; 4],
    pub hx: f64,
    pub hy: f64,
    pub substeps: usize,
    pub samples: u64,
    pub seed: u64,
    /// Pass band in standard errors.
    pub threshold: f64,

    /// Wilson-loop rectangles `[x0, x1, y0, y1]`.
    pub rects: Vec<[f64; 4]>,
    /// Widths of the insertion regions `[0, w] x [0, 1]`.
    pub q_widths: Vec<f64>,
    /// Expected log-log slope band of the insertion variance against `|Q|`.
    pub insertion_slope_band: [f64; 2],
    /// Deformation widths used by the `eps` sweep when no values are given.
    pub eps: Vec<f64>,
    pub gap_slope_min: f64,

    /// Perturbation `eta` as a reflected pair on this rectangle, along the first basis element.
    pub eta_rect: [f64; 4],
    pub eta_scale: f64,

    pub alpha: f64,
    pub alpha_rect: [f64; 4],
    pub psi_region: [f64; 4],
    pub psi_scale: f64,
    pub gauge_scale: f64,

    pub loop_times: Vec<f64>,
    pub drift_slope_band: [f64; 2],
    pub centered_slope_band: [f64; 2],

    pub mesh_hx: f64,
    pub mesh_hy: f64,
    pub mesh_levels: usize,
    /// Flat curve `[x_start, x_end, y]`.
    pub mesh_curve: [f64; 3],
    pub mesh_eta_rect: [f64; 4],
    pub mesh_eta_scale: f64,
    pub mesh_samples: u64,
    pub mesh_tolerance: f64,

    pub oracle_steps: usize,
    pub smooth_steps: usize,
    pub remainder_slope_band: [f64; 2],

    pub out_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            group: "su2".into(),
            t1: 0.5,
            t3: 0.5,
            window: [-0.5, 0.5, -1.0, 1.0],
            hx: 0.05,
            hy: 0.5,
            substeps: 16,
            samples: 20_000,
            seed: 1,
            threshold: 3.0,
            rects: vec![[0.0, 0.25, 0.0, 1.0], [0.0, 0.5, 0.0, 1.0], [-0.5, 0.5, 0.0, 1.0]],
            q_widths: vec![0.05, 0.1, 0.2],
            insertion_slope_band: [-1.2, -0.8],
            eps: smooth::fixtures::LOOP_EPS.to_vec(),
            gap_slope_min: 0.4,
            eta_rect: [0.0, 0.1, 0.0, 1.0],
            eta_scale: 1.0,
            alpha: 0.8,
            alpha_rect: [0.0, 0.2, 0.0, 1.0],
            psi_region: [-0.1, 0.3, -0.5, 1.0],
            psi_scale: 1.5,
            gauge_scale: 3.0,
            loop_times: vec![0.1, 0.2, 0.4],
            drift_slope_band: [1.2, 1.8],
            centered_slope_band: [0.8, 1.2],
            mesh_hx: 0.0125,
            mesh_hy: 0.125,
            mesh_levels: 3,
            mesh_curve: [-0.2, 0.3, 0.5],
            mesh_eta_rect: [0.0, 0.2, 0.0, 1.0],
            mesh_eta_scale: 2.0,
            mesh_samples: 64,
            mesh_tolerance: 1e-6,
            oracle_steps: 200,
            smooth_steps: smooth::DEFAULT_STEPS,
            remainder_slope_band: [3.6, 4.4],
            out_dir: "ym2-out".into(),
        }
    }
}

/// Parses a scalar the way config files do: JSON if it parses, a bare string otherwise.
fn parse_value(raw: &str) -> Value {
    let t = raw.trim();
    serde_json::from_str(t).unwrap_or_else(|_| Value::String(t.to_string()))
}

impl ExperimentConfig {
    /// Flat `key = value` text (values in JSON syntax, `#` starts a comment),
    /// or a single JSON object.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim_start();
        if t.starts_with('{') {
            return serde_json::from_str(t).map_err(|e| Error::Format(format!("config: {e}")));
        }
        let mut map = Map::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("config line {}: expected `key = value`", lineno + 1)))?;
            let k = k.trim();
            if map.insert(k.to_string(), parse_value(v)).is_some() {
                return Err(Error::Format(format!("config line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        serde_json::from_value(Value::Object(map)).map_err(|e| Error::Format(format!("config: {e}")))
    }

    /// Overrides one key with a raw value.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let Value::Object(mut map) = serde_json::to_value(&*self)? else {
            unreachable!("config serializes to an object")
        };
        if !map.contains_key(key) {
            return Err(Error::InvalidArgument(format!("unknown config key `{key}`")));
        }
        map.insert(key.to_string(), parse_value(raw));
        *self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Format(format!("config key `{key}`: {e}")))?;
        Ok(())
    }

    /// The configuration as `key = value` lines, parseable by [`ExperimentConfig::parse`].
    pub fn to_text(&self) -> String {
        let Value::Object(map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config serializes to an object")
        };
        map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn group_kind(&self) -> Result<GroupKind> {
        self.group.parse()
    }

    pub fn grid(&self) -> Result<GridWindow> {
        let [x0, x1, y0, y1] = self.window;
        GridWindow::with_spacing(x0, x1, y0, y1, self.hx, self.hy)
            .map_err(|e| Error::InvalidArgument(format!("window / hx / hy: {e}")))
    }

    fn setup(&self) -> Result<Setup> {
        let ctx = Arc::new(GroupContext::new(self.group_kind()?)?);
        Ok(Setup::new(ctx, self.grid()?, self.substeps))
    }

    /// Checks everything `exp` will use, so that geometry errors surface
    /// before any sampling and name the offending key.
    pub fn validate(&self, exp: Experiment) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.samples < 100 {
            return bad(format!("samples = {} is below the minimum of 100", self.samples));
        }
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return bad("threshold must be positive".into());
        }
        if self.substeps == 0 {
            return bad("substeps must be positive".into());
        }
        self.group_kind()?;
        let w = self.grid()?;
        let rect = |r: &[f64; 4], name: &str| -> Result<()> {
            w.node_x(r[0], &format!("{name}[0]"))?;
            w.node_x(r[1], &format!("{name}[1]"))?;
            w.node_y(r[2], &format!("{name}[2]"))?;
            w.node_y(r[3], &format!("{name}[3]"))?;
            if !(r[0] < r[1] && r[2] < r[3]) {
                return Err(Error::InvalidArgument(format!("{name}: corners out of order")));
            }
            Ok(())
        };
        let figure = || -> Result<()> {
            if !(self.t1 > 0.0 && self.t3 > 0.0) {
                return bad("t1 and t3 must be positive".into());
            }
            w.node_x(self.t1, "t1")?;
            w.node_x(-self.t3, "t3")?;
            w.node_y(1.0, "lobe height")?;
            w.node_y(-1.0, "lobe height")?;
            Ok(())
        };
        match exp {
            Experiment::WilsonDecay => {
                if self.rects.is_empty() {
                    return bad("rects is empty".into());
                }
                for (i, r) in self.rects.iter().enumerate() {
                    rect(r, &format!("rects[{i}]"))?;
                }
            }
            Experiment::MmCheck => {
                figure()?;
                for (i, &q) in self.q_widths.iter().enumerate() {
                    w.node_x(q, &format!("q_widths[{i}]"))?;
                    if !(q > 0.0 && q < self.t1) {
                        return bad(format!("q_widths[{i}] = {q} must lie in (0, t1)"));
                    }
                }
            }
            Experiment::IbpCheck => {
                figure()?;
                rect(&self.eta_rect, "eta_rect")?;
                if self.mesh_levels == 0 || self.mesh_samples < 2 {
                    return bad("mesh_levels must be positive and mesh_samples at least 2".into());
                }
                let [x0, x1, y0, y1] = self.window;
                let fine = GridWindow::with_spacing(x0, x1, y0, y1, self.mesh_hx, self.mesh_hy)
                    .map_err(|e| Error::InvalidArgument(format!("mesh_hx / mesh_hy: {e}")))?;
                let coarse_hx = self.mesh_hx * (1u64 << (self.mesh_levels - 1)) as f64;
                let coarse_hy = self.mesh_hy * (1u64 << (self.mesh_levels - 1)) as f64;
                let coarse = GridWindow::with_spacing(x0, x1, y0, y1, coarse_hx, coarse_hy)
                    .map_err(|e| Error::InvalidArgument(format!("mesh_levels (coarsest mesh): {e}")))?;
                if coarse.nx * (1 << (self.mesh_levels - 1)) != fine.nx || coarse.ny * (1 << (self.mesh_levels - 1)) != fine.ny {
                    return bad("mesh_levels: the fine mesh does not halve evenly".into());
                }
                let [cx0, cx1, cy] = self.mesh_curve;
                coarse.node_x(cx0, "mesh_curve[0]")?;
                coarse.node_x(cx1, "mesh_curve[1]")?;
                coarse.node_y(cy, "mesh_curve[2]")?;
                if !(cx0 < cx1) {
                    return bad("mesh_curve: x_start must be below x_end".into());
                }
                for (v, n) in [(self.mesh_eta_rect[0], "mesh_eta_rect[0]"), (self.mesh_eta_rect[1], "mesh_eta_rect[1]")] {
                    coarse.node_x(v, n)?;
                }
                for (v, n) in [(self.mesh_eta_rect[2], "mesh_eta_rect[2]"), (self.mesh_eta_rect[3], "mesh_eta_rect[3]")] {
                    coarse.node_y(v, n)?;
                }
            }
            Experiment::GirsanovCheck => {
                rect(&self.alpha_rect, "alpha_rect")?;
                rect(&self.psi_region, "psi_region")?;
            }
            Experiment::LoopExpansion => {
                w.node_y(1.0, "loop height")?;
                for (i, &t) in self.loop_times.iter().enumerate() {
                    w.node_x(t, &format!("loop_times[{i}]"))?;
                    if !(t > 0.0) {
                        return bad(format!("loop_times[{i}] must be positive"));
                    }
                }
            }
            Experiment::SmoothLab => {
                if self.smooth_steps == 0 {
                    return bad("smooth_steps must be positive".into());
                }
            }
            Experiment::OracleVsField => {
                figure()?;
                if self.oracle_steps == 0 {
                    return bad("oracle_steps must be positive".into());
                }
            }
        }
        Ok(())
    }
}

// ----------------------------------------------------------------- records

/// One check. `lhs` and `rhs` carry their standard errors (0 for exact
/// values); deterministic checks have `n = 0` and state their tolerance in
/// `criterion`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub experiment: String,
    pub group: String,
    pub check: String,
    pub params: Value,
    #[serde(deserialize_with = "nan_from_null")]
    pub lhs: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub lhs_stderr: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub rhs: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub rhs_stderr: f64,
    #[serde(deserialize_with = "nan_from_null")]
    pub diff_stderr: f64,
    pub z: Option<f64>,
    pub criterion: String,
    pub pass: bool,
    pub n: u64,
    pub seed: u64,
}

/// JSON writes non-finite floats as `null`; read them back as NaN.
fn nan_from_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn describe(b: Bound) -> String {
    match b {
        Bound::AtMost(v) => format!("value <= {v:e}"),
        Bound::AtLeast(v) => format!("value >= {v}"),
        Bound::Within(lo, hi) => format!("value in [{lo}, {hi}]"),
    }
}

struct Recorder<'a> {
    exp: Experiment,
    group: String,
    cfg: &'a ExperimentConfig,
    out: Vec<Record>,
}

impl<'a> Recorder<'a> {
    fn new(exp: Experiment, cfg: &'a ExperimentConfig) -> Result<Self> {
        Ok(Recorder { exp, group: cfg.group_kind()?.to_string(), cfg, out: Vec::new() })
    }

    fn base(&self, check: &str, params: Value) -> Record {
        Record {
            experiment: self.exp.name().into(),
            group: self.group.clone(),
            check: check.into(),
            params,
            lhs: f64::NAN,
            lhs_stderr: 0.0,
            rhs: f64::NAN,
            rhs_stderr: 0.0,
            diff_stderr: 0.0,
            z: None,
            criterion: String::new(),
            pass: false,
            n: 0,
            seed: self.cfg.seed,
        }
    }

    fn comparison(&mut self, check: &str, params: Value, r: &ComparisonReport) {
        let mut rec = self.base(check, params);
        rec.lhs = r.lhs.mean;
        rec.lhs_stderr = r.lhs.stderr;
        rec.rhs = r.rhs.mean;
        rec.rhs_stderr = r.rhs.stderr;
        rec.diff_stderr = r.diff_stderr;
        rec.z = r.z.is_finite().then_some(r.z);
        rec.criterion = format!("|z| <= {}", r.threshold);
        rec.pass = r.pass;
        rec.n = r.lhs.n.max(r.rhs.n);
        self.out.push(rec);
    }

    /// A value against a fixed bound; `stderr` is 0 for deterministic values.
    fn bounded(&mut self, check: &str, params: Value, value: f64, stderr: f64, n: u64, bound: Bound) {
        let mut rec = self.base(check, params);
        rec.lhs = value;
        rec.lhs_stderr = stderr;
        rec.criterion = describe(bound);
        rec.pass = value.is_finite() && bound.holds(value);
        rec.n = n;
        self.out.push(rec);
    }

    /// Log-log slope of `ys` against `xs`; a failed fit is recorded as a failed check.
    fn slope(&mut self, check: &str, xs: &[f64], ys: &[f64], n: u64, bound: Bound) {
        let fit: Option<SlopeFit> = fit_loglog(xs, ys).ok();
        let params = json!({
            "xs": xs,
            "ys": ys,
            "band": fit.as_ref().map(|f| [f.band.0, f.band.1]),
            "intercept": fit.as_ref().map(|f| f.intercept),
        });
        let (s, se) = fit.map(|f| (f.slope, f.slope_stderr)).unwrap_or((f64::NAN, f64::NAN));
        self.bounded(check, params, s, se, n, bound);
    }
}

// ----------------------------------------------------------------- runners

fn rect_of(r: [f64; 4]) -> Result<Rect> {
    Rect::new(r[0], r[1], r[2], r[3])
}

fn figure(setup: &Setup, cfg: &ExperimentConfig) -> Result<(FigureEight, TameGraph, WilsonFunctional)> {
    let fig = FigureEight::from_areas(cfg.t1, cfg.t3);
    let (g, u) = fig.build(&setup.window, setup.ctx.matrix_dim())?;
    Ok((fig, g, u))
}

/// Runs one experiment with its default parameters.
pub fn run(exp: Experiment, cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    cfg.validate(exp)?;
    let mut rec = Recorder::new(exp, cfg)?;
    let (n, seed, thr) = (cfg.samples, cfg.seed, cfg.threshold);
    match exp {
        Experiment::WilsonDecay => {
            let setup = cfg.setup()?;
            for (i, row) in verify::wilson_decay(&setup, &cfg.rects, n, seed, thr)?.iter().enumerate() {
                rec.comparison(&format!("wilson[{i}]"), json!({"rect": row.rect, "area": row.area}), &row.report);
            }
        }
        Experiment::MmCheck => mm_check(&mut rec)?,
        Experiment::IbpCheck => ibp(&mut rec)?,
        Experiment::GirsanovCheck => girsanov(&mut rec)?,
        Experiment::LoopExpansion => loop_expansion(&mut rec, &cfg.loop_times)?,
        Experiment::SmoothLab => {
            let ctx = GroupContext::new(cfg.group_kind()?)?;
            for c in smooth::standard_suite(&ctx, cfg.smooth_steps)? {
                rec.bounded(&c.name, json!({"steps": cfg.smooth_steps}), c.value, 0.0, 0, c.bound);
            }
        }
        Experiment::OracleVsField => {
            let setup = cfg.setup()?;
            let (_, g, u) = figure(&setup, cfg)?;
            let field = verify::mm_lhs(&setup, &g, &u, n, seed)?.wilson;
            let oracle = verify::oracle_figure_eight_mean(&setup.ctx, cfg.t1, cfg.t3, cfg.oracle_steps, n, seed)?;
            let exact = MCEstimate::exact(verify::lobe_trace(&setup.ctx, cfg.t1 + cfg.t3));
            let p = json!({"t1": cfg.t1, "t3": cfg.t3, "oracle_steps": cfg.oracle_steps});
            rec.comparison("field_vs_lobe_oracle", p.clone(), &compare(field, oracle, thr));
            rec.comparison("field_vs_exact", p.clone(), &compare(field, exact, thr));
            rec.comparison("lobe_oracle_vs_exact", p, &compare(oracle, exact, thr));
        }
    }
    Ok(rec.out)
}

fn mm_check(rec: &mut Recorder) -> Result<()> {
    let cfg = rec.cfg;
    let (n, seed, thr) = (cfg.samples, cfg.seed, cfg.threshold);
    let setup = cfg.setup()?;
    let (_, g, u) = figure(&setup, cfg)?;
    let lhs = verify::mm_lhs(&setup, &g, &u, n, seed)?;
    let rhs = MCEstimate::exact(verify::mm_rhs_oracle(&setup.ctx, cfg.t1, cfg.t3));
    rec.comparison("mm_lhs_vs_rhs", json!({"t1": cfg.t1, "t3": cfg.t3}), &compare(lhs.lhs, rhs, thr));
    let (mut areas, mut var_r, mut var_e) = (Vec::new(), Vec::new(), Vec::new());
    for &q in &cfg.q_widths {
        let region = GridRegion::rect(&setup.window, 0.0, q, 0.0, 1.0)?;
        let ins = verify::mm_insertion(&setup, &g, &u, &region, n, seed)?;
        let [r, e] = ins.reports(thr);
        let p = json!({"q_width": q, "area": ins.area});
        rec.comparison(&format!("insertion_reflected[{q}]"), p.clone(), &r);
        rec.comparison(&format!("insertion_extended[{q}]"), p, &e);
        areas.push(ins.area);
        var_r.push(ins.reflected.stderr.powi(2));
        var_e.push(ins.extended.stderr.powi(2));
    }
    if areas.len() >= 3 {
        let [lo, hi] = cfg.insertion_slope_band;
        rec.slope("insertion_variance_slope_reflected", &areas, &var_r, n, Bound::Within(lo, hi));
        rec.slope("insertion_variance_slope_extended", &areas, &var_e, n, Bound::Within(lo, hi));
    }
    Ok(())
}

fn ibp(rec: &mut Recorder) -> Result<()> {
    let cfg = rec.cfg;
    let (n, seed, thr) = (cfg.samples, cfg.seed, cfg.threshold);
    let setup = cfg.setup()?;
    let ctx = setup.ctx.clone();
    let (_, g, u) = figure(&setup, cfg)?;
    let xi = ctx.basis()[0].scale_re(cfg.eta_scale);
    let eta = PerturbationOneForm::reflected_pair(&ctx, rect_of(cfg.eta_rect)?, &xi);
    let p = json!({"eta_rect": cfg.eta_rect, "eta_scale": cfg.eta_scale});
    rec.comparison("ibp", p.clone(), &verify::ibp_check(&setup, &g, &u, &eta, n, seed, thr)?);
    let zero = PerturbationOneForm::zero(&ctx);
    rec.comparison("ibp_zero_eta", json!({}), &verify::ibp_check(&setup, &g, &u, &zero, n, seed, thr)?);
    let constant = WilsonFunctional::constant(ctx.matrix_dim(), g.edges().len(), C64::new(1.0, 0.0));
    rec.comparison("ibp_constant_u", p, &verify::ibp_check(&setup, &g, &constant, &eta, n, seed, thr)?);

    let [x0, x1, y0, y1] = cfg.window;
    let fine = GridWindow::with_spacing(x0, x1, y0, y1, cfg.mesh_hx, cfg.mesh_hy)?;
    let [cx0, cx1, cy] = cfg.mesh_curve;
    let curve = HorizontalCurve::flat(cx0, cx1, cy)?;
    let mxi = ctx.basis()[0].scale_re(cfg.mesh_eta_scale);
    let meta = PerturbationOneForm::reflected_pair(&ctx, rect_of(cfg.mesh_eta_rect)?, &mxi);
    let rows = verify::perturbation_mesh_scan(ctx.clone(), fine, cfg.mesh_levels, &curve, &meta, cfg.mesh_samples, seed)?;
    for pair in rows.windows(2) {
        let (c, f) = (&pair[0], &pair[1]);
        let d = f.decrease.expect("every refined mesh reports its decrease");
        let p = json!({
            "coarse": {"hx": c.hx, "hy": c.hy, "residual": c.residual.mean, "stderr": c.residual.stderr},
            "fine": {"hx": f.hx, "hy": f.hy, "residual": f.residual.mean, "stderr": f.residual.stderr},
        });
        let mut r = rec.base(&format!("mesh_decrease[{}]", f.hx), p);
        r.lhs = d.mean;
        r.lhs_stderr = d.stderr;
        r.rhs = 0.0;
        r.diff_stderr = d.stderr;
        r.criterion = format!("decrease >= -{thr} stderr");
        r.pass = if d.stderr > 0.0 { d.mean >= -thr * d.stderr } else { d.mean >= -1e-12 };
        r.n = d.n;
        rec.out.push(r);
    }
    if ctx.kind().is_abelian() {
        let last = rows.last().expect("at least one mesh");
        let p = json!({"hx": last.hx, "hy": last.hy});
        rec.bounded("mesh_finest_abelian", p, last.residual.mean, last.residual.stderr, last.residual.n, Bound::AtMost(cfg.mesh_tolerance));
    }
    Ok(())
}

fn girsanov(rec: &mut Recorder) -> Result<()> {
    let cfg = rec.cfg;
    let (n, seed, thr) = (cfg.samples, cfg.seed, cfg.threshold);
    let setup = cfg.setup()?;
    let ctx = setup.ctx.clone();
    let w = setup.window;
    let m = ctx.algebra_dim();
    let mut alpha = vec![0.0; w.cells() * m];
    let [ax0, ax1, ay0, ay1] = cfg.alpha_rect;
    for (col, row) in GridRegion::rect(&w, ax0, ax1, ay0, ay1)?.cells() {
        alpha[(col * w.ny + row) * m] = cfg.alpha;
    }
    let [bx0, bx1, by0, by1] = cfg.psi_region;
    let region = GridRegion::rect(&w, bx0, bx1, by0, by1)?;
    let xi = ctx.basis()[0].clone();
    let gauges = [
        ("identity", XGauge::Identity),
        ("exp", XGauge::Exp(ctx.basis()[2 % m].scale_re(cfg.gauge_scale))),
    ];
    let p = |g: &str| {
        json!({"alpha": cfg.alpha, "alpha_rect": cfg.alpha_rect, "psi_region": cfg.psi_region, "psi_scale": cfg.psi_scale,
               "gauge": g, "gauge_scale": cfg.gauge_scale})
    };
    for (label, gauge) in &gauges {
        let lin = verify::girsanov_check(&setup, &Psi::Linear { region: region.clone(), xi: xi.clone() }, &alpha, gauge, n, seed, thr)?;
        rec.comparison(&format!("girsanov_linear[{label}]"), p(label), &lin.comparison);
        if let Some(a) = &lin.analytic_report {
            rec.comparison(&format!("girsanov_linear_analytic[{label}]"), p(label), a);
        }
        let cos = Psi::Cos { region: region.clone(), xi: xi.clone(), scale: cfg.psi_scale };
        let nl = verify::girsanov_check(&setup, &cos, &alpha, gauge, n, seed, thr)?;
        rec.comparison(&format!("girsanov_cos[{label}]"), p(label), &nl.comparison);
    }
    Ok(())
}

fn loop_expansion(rec: &mut Recorder, ts: &[f64]) -> Result<()> {
    let cfg = rec.cfg;
    let (n, seed, thr) = (cfg.samples, cfg.seed, cfg.threshold);
    let setup = cfg.setup()?;
    let scan = verify::loop_expansion_scan(&setup, ts, n, seed, thr)?;
    for r in &scan.rows {
        let mut x = rec.base(&format!("loop_mean[{}]", r.t), json!({"t": r.t, "area": r.area}));
        x.lhs = r.mean_residual;
        x.lhs_stderr = r.mean_sigma;
        x.rhs = 0.0;
        x.diff_stderr = r.mean_sigma;
        x.z = (r.mean_sigma > 0.0).then(|| r.mean_residual / r.mean_sigma);
        x.criterion = format!("max-norm residual <= {thr} stderr");
        x.pass = r.mean_pass;
        x.n = n;
        rec.out.push(x);
    }
    let xs: Vec<f64> = scan.rows.iter().map(|r| r.area).collect();
    let drift: Vec<f64> = scan.rows.iter().map(|r| r.drift_residual.mean).collect();
    let centered: Vec<f64> = scan.rows.iter().map(|r| r.centered_l2.mean).collect();
    let [dlo, dhi] = cfg.drift_slope_band;
    let [clo, chi] = cfg.centered_slope_band;
    rec.slope("drift_residual_slope", &xs, &drift, n, Bound::Within(dlo, dhi));
    rec.slope("centered_residual_slope", &xs, &centered, n, Bound::Within(clo, chi));
    Ok(())
}

// ------------------------------------------------------------------ sweeps

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: String,
    pub values: Vec<f64>,
}

fn check_sweep_values(values: &[f64]) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::InvalidArgument(format!("a sweep needs at least 3 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("sweep values must be finite".into()));
    }
    let up = values.windows(2).all(|p| p[0] < p[1]);
    let down = values.windows(2).all(|p| p[0] > p[1]);
    if !(up || down) {
        return Err(Error::InvalidArgument("sweep values must be strictly monotone".into()));
    }
    Ok(())
}

/// Runs `exp` over `values` of `param` and fits the convergence slope.
pub fn sweep(exp: Experiment, cfg: &ExperimentConfig, param: &str, values: &[f64]) -> Result<Vec<Record>> {
    if !exp.sweep_params().contains(&param) {
        return Err(Error::InvalidArgument(format!(
            "{exp} does not sweep `{param}` (supported: {})",
            if exp.sweep_params().is_empty() { "none".to_string() } else { exp.sweep_params().join(", ") }
        )));
    }
    check_sweep_values(values)?;
    let mut rec = Recorder::new(exp, cfg)?;
    let (n, seed, thr) = (cfg.samples, cfg.seed, cfg.threshold);
    match exp {
        Experiment::MmCheck => {
            cfg.validate(exp)?;
            let setup = cfg.setup()?;
            let fig = FigureEight::from_areas(cfg.t1, cfg.t3);
            for (i, &e) in values.iter().enumerate() {
                setup.window.node_x(e, &format!("values[{i}]"))?;
            }
            let (mut xs, mut gaps) = (Vec::new(), Vec::new());
            for &e in values {
                let d = verify::mm_deformation(&setup, &fig, e, n, seed)?;
                let p = json!({"eps": e, "q": d.q, "insertion": d.insertion.mean, "insertion_stderr": d.insertion.stderr,
                               "gap": d.gap.mean, "gap_stderr": d.gap.stderr});
                rec.comparison(&format!("deformation[{e}]"), p, &compare(d.estimate, MCEstimate::exact(d.oracle), thr));
                xs.push(e);
                gaps.push(d.gap.mean.abs());
            }
            rec.slope("deformation_gap_slope", &xs, &gaps, n, Bound::AtLeast(cfg.gap_slope_min));
        }
        Experiment::SmoothLab => {
            cfg.validate(exp)?;
            if values.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::InvalidArgument("eps values must be positive".into()));
            }
            let ctx = GroupContext::new(cfg.group_kind()?)?;
            let f = smooth::fixtures::curvature(&ctx);
            let e = smooth::smooth_loop_expansion(&f, smooth::fixtures::loop_shape(), values, None, cfg.smooth_steps);
            for r in &e.rows {
                let p = json!({"eps": r.eps, "remainder": r.remainder, "remainder_reflected": r.remainder_reflected});
                rec.bounded(&format!("green_identity[{}]", r.eps), p, r.green_residual, 0.0, 0, Bound::AtMost(1e-6));
            }
            let [lo, hi] = cfg.remainder_slope_band;
            let rem: Vec<f64> = e.rows.iter().map(|r| r.remainder).collect();
            let refl: Vec<f64> = e.rows.iter().map(|r| r.remainder_reflected).collect();
            rec.slope("remainder_slope", values, &rem, 0, Bound::Within(lo, hi));
            rec.slope("remainder_slope_reflected", values, &refl, 0, Bound::Within(lo, hi));
        }
        Experiment::LoopExpansion => {
            let mut c = cfg.clone();
            c.loop_times = values.to_vec();
            c.validate(exp)?;
            let mut r = Recorder::new(exp, &c)?;
            loop_expansion(&mut r, values)?;
            return Ok(r.out);
        }
        _ => unreachable!("filtered by sweep_params"),
    }
    Ok(rec.out)
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub experiment: String,
    pub checks: usize,
    pub failed: Vec<String>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub sweep: Option<SweepSpec>,
    pub config: ExperimentConfig,
    pub seed_derivation: String,
    pub started: String,
    pub finished: String,
    pub wall_seconds: f64,
    pub threads: usize,
    pub experiments: Vec<ExperimentSummary>,
    pub pass: bool,
    pub exit_status: i32,
}

/// Exit status of a completed run: 0 if every check passes, 1 otherwise.
pub fn exit_status(records: &[Record]) -> i32 {
    if records.iter().all(|r| r.pass) {
        0
    } else {
        1
    }
}

/// Exit status for a run that could not start (bad configuration).
pub const CONFIG_ERROR: i32 = 2;

pub fn summarize(records: &[Record]) -> Vec<ExperimentSummary> {
    let mut out: Vec<ExperimentSummary> = Vec::new();
    for r in records {
        let i = match out.iter().position(|s| s.experiment == r.experiment) {
            Some(i) => i,
            None => {
                out.push(ExperimentSummary { experiment: r.experiment.clone(), checks: 0, failed: vec![], pass: true });
                out.len() - 1
            }
        };
        let s = &mut out[i];
        s.checks += 1;
        if !r.pass {
            s.failed.push(r.check.clone());
            s.pass = false;
        }
    }
    out
}

/// Fixed-width table of the records, one line per check.
pub fn summary_table(records: &[Record]) -> String {
    let w = records.iter().map(|r| r.check.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<w$}  {:>13}  {:>10}  {:>13}  {:>8}  {}\n", "check", "lhs", "stderr", "rhs", "z", "result");
    for r in records {
        let z = r.z.map(|z| format!("{z:8.3}")).unwrap_or_else(|| format!("{:>8}", "-"));
        s.push_str(&format!(
            "{:<w$}  {:>13.6e}  {:>10.3e}  {:>13.6e}  {}  {} ({})\n",
            r.check,
            r.lhs,
            r.lhs_stderr,
            r.rhs,
            z,
            if r.pass { "pass" } else { "FAIL" },
            r.criterion
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_text_and_json() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(ExperimentConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn text_config_accepts_comments_and_bare_strings() {
        let c = ExperimentConfig::parse("# run\ngroup = u1   # abelian\nsamples = 500\nt1 = 0.25\n\n").unwrap();
        assert_eq!(c.group, "u1");
        assert_eq!(c.samples, 500);
        assert_eq!(c.t1, 0.25);
        assert_eq!(c.t3, 0.5);
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        assert!(ExperimentConfig::parse("sampels = 5").unwrap_err().to_string().contains("sampels"));
        assert!(ExperimentConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(ExperimentConfig::parse("no equals sign").is_err());
        let mut c = ExperimentConfig::default();
        assert!(c.set("bogus", "1").is_err());
        c.set("seed", "9").unwrap();
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn validation_names_the_offending_parameter() {
        let mut c = ExperimentConfig { samples: 99, ..Default::default() };
        assert!(c.validate(Experiment::WilsonDecay).unwrap_err().to_string().contains("samples"));
        c.samples = 100;
        c.t1 = 0.33;
        let e = c.validate(Experiment::MmCheck).unwrap_err().to_string();
        assert!(e.contains("t1"), "{e}");
        c.t1 = 0.5;
        c.rects = vec![[0.0, 0.25, 0.0, 1.0], [0.0, 0.27, 0.0, 1.0]];
        let e = c.validate(Experiment::WilsonDecay).unwrap_err().to_string();
        assert!(e.contains("rects[1][1]"), "{e}");
        c.hx = 0.3;
        assert!(c.validate(Experiment::WilsonDecay).unwrap_err().to_string().contains("hx"));
        let c = ExperimentConfig { group: "so3".into(), ..Default::default() };
        assert!(c.validate(Experiment::SmoothLab).is_err());
    }

    #[test]
    fn degenerate_sweeps_are_rejected() {
        let c = ExperimentConfig::default();
        for v in [&[0.1, 0.1, 0.1][..], &[0.1, 0.2][..], &[0.1, 0.3, 0.2][..], &[0.1, f64::NAN, 0.3][..]] {
            assert!(sweep(Experiment::MmCheck, &c, "eps", v).is_err(), "{v:?}");
        }
        assert!(sweep(Experiment::WilsonDecay, &c, "eps", &[0.1, 0.2, 0.3]).is_err());
        assert!(sweep(Experiment::MmCheck, &c, "substeps", &[1.0, 2.0, 4.0]).is_err());
    }

    #[test]
    fn exit_status_depends_only_on_pass_flags() {
        let c = ExperimentConfig { samples: 200, ..Default::default() };
        let mut recs = run(Experiment::WilsonDecay, &c).unwrap();
        assert_eq!(recs.len(), 3);
        recs.iter_mut().for_each(|r| r.pass = true);
        assert_eq!(exit_status(&recs), 0);
        recs[1].pass = false;
        assert_eq!(exit_status(&recs), 1);
        let s = summarize(&recs);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].failed, vec!["wilson[1]".to_string()]);
        assert!(summary_table(&recs).contains("FAIL"));
    }

    #[test]
    fn runs_are_deterministic() {
        let c = ExperimentConfig { samples: 300, group: "u1".into(), ..Default::default() };
        let a = serde_json::to_string(&run(Experiment::MmCheck, &c).unwrap()).unwrap();
        let b = serde_json::to_string(&run(Experiment::MmCheck, &c).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn records_with_missing_values_roundtrip() {
        let c = ExperimentConfig::default();
        let mut r = Recorder::new(Experiment::SmoothLab, &c).unwrap();
        r.slope("flat", &[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], 0, Bound::AtLeast(0.0));
        let rec = &r.out[0];
        assert!(!rec.pass && rec.lhs.is_nan());
        let back: Record = serde_json::from_str(&serde_json::to_string(rec).unwrap()).unwrap();
        assert!(back.lhs.is_nan() && back.rhs.is_nan());
        assert_eq!(back.check, "flat");
    }

    #[test]
    fn experiment_names_roundtrip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        assert!("mm".parse::<Experiment>().is_err());
    }
}
