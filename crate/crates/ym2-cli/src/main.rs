//! `ym2`: batch runner for the white-noise holonomy experiments.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 for
//! configuration errors. `YM2_THREADS` caps the worker pool.

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;
use ym2_core::harness::{self, Experiment, ExperimentConfig, Record, RunManifest, SweepSpec};

#[derive(Parser)]
#[command(name = "ym2", version, about = "Monte-Carlo checks for white-noise Yang-Mills holonomies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file: `key = value` lines or a JSON object.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<u64>,
    /// u1, su2, sun:N or un:N.
    #[arg(long)]
    group: Option<String>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra overrides, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Wilson loops of grid rectangles against the heat-kernel value.
    WilsonDecay(Common),
    /// Crossing side of the figure-eight loop equation and its insertion forms.
    MmCheck(Common),
    /// Integration by parts and the mesh scan of the perturbed transport identity.
    IbpCheck(Common),
    /// Cameron-Martin reweighting through a gauge.
    GirsanovCheck(Common),
    /// Mean and drift of the inverse transport along the top of a strip.
    LoopExpansion(Common),
    /// Deterministic identities for smooth connections.
    SmoothLab(Common),
    /// Field-based figure-eight mean against the independent lobe sampler.
    OracleVsField(Common),
    /// Parameter sweep with a log-log slope fit.
    Sweep {
        experiment: String,
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults to the config's list for `eps` and `t`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the effective configuration as `key = value` lines.
    PrintConfig(Common),
}

fn load_config(c: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.samples {
        cfg.samples = n;
    }
    if let Some(g) = &c.group {
        cfg.group = g.clone();
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.display().to_string();
    }
    for kv in &c.set {
        let Some((k, v)) = kv.split_once('=') else { bail!("--set expects key=value, got `{kv}`") };
        cfg.set(k.trim(), v)?;
    }
    Ok(cfg)
}

fn init_threads() -> anyhow::Result<usize> {
    if let Ok(v) = std::env::var("YM2_THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).with_context(|| format!("YM2_THREADS = `{v}` is not a positive integer"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(rayon::current_num_threads())
}

#[derive(serde::Serialize)]
struct CsvRow<'a> {
    experiment: &'a str,
    group: &'a str,
    check: &'a str,
    params: String,
    lhs: f64,
    lhs_stderr: f64,
    rhs: f64,
    rhs_stderr: f64,
    diff_stderr: f64,
    z: Option<f64>,
    criterion: &'a str,
    pass: bool,
    n: u64,
    seed: u64,
}

/// Rewrites `results.csv` from every `*.jsonl` in `dir`, in file-name order.
fn merge_csv(dir: &Path) -> anyhow::Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut w = csv::Writer::from_path(dir.join("results.csv"))?;
    for f in files {
        for line in fs::read_to_string(&f)?.lines().filter(|l| !l.trim().is_empty()) {
            let r: Record = serde_json::from_str(line).with_context(|| format!("parsing {}", f.display()))?;
            w.serialize(CsvRow {
                experiment: &r.experiment,
                group: &r.group,
                check: &r.check,
                params: r.params.to_string(),
                lhs: r.lhs,
                lhs_stderr: r.lhs_stderr,
                rhs: r.rhs,
                rhs_stderr: r.rhs_stderr,
                diff_stderr: r.diff_stderr,
                z: r.z,
                criterion: &r.criterion,
                pass: r.pass,
                n: r.n,
                seed: r.seed,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn execute(exp: Experiment, sweep: Option<SweepSpec>, cfg: ExperimentConfig, threads: usize) -> anyhow::Result<ExitCode> {
    let started = chrono::Utc::now();
    let clock = Instant::now();
    let records = match &sweep {
        Some(s) => harness::sweep(exp, &cfg, &s.param, &s.values),
        None => harness::run(exp, &cfg),
    };
    let records = match records {
        Ok(r) => r,
        Err(e) => {
            eprintln!("ym2: configuration error: {e}");
            return Ok(ExitCode::from(harness::CONFIG_ERROR as u8));
        }
    };
    let dir = PathBuf::from(&cfg.out_dir);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = match &sweep {
        Some(s) => format!("{exp}.sweep-{}", s.param),
        None => exp.to_string(),
    };
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    fs::write(dir.join(format!("{stem}.jsonl")), body)?;
    merge_csv(&dir)?;

    let status = harness::exit_status(&records);
    let experiments = harness::summarize(&records);
    let manifest = RunManifest {
        tool: "ym2".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: exp.to_string(),
        sweep,
        config: cfg,
        seed_derivation: harness::SEED_DERIVATION.into(),
        started: started.to_rfc3339(),
        finished: chrono::Utc::now().to_rfc3339(),
        wall_seconds: clock.elapsed().as_secs_f64(),
        threads,
        pass: status == 0,
        experiments,
        exit_status: status,
    };
    let mpath = dir.join(format!("{stem}.manifest.json"));
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)?;

    print!("{}", harness::summary_table(&records));
    let failed = records.iter().filter(|r| !r.pass).count();
    println!("{stem}: {} checks, {failed} failed; manifest {}", records.len(), mpath.display());
    Ok(ExitCode::from(status as u8))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = (|| -> anyhow::Result<ExitCode> {
        let (exp, sweep, common) = match cli.cmd {
            Cmd::PrintConfig(c) => {
                print!("{}", load_config(&c)?.to_text());
                return Ok(ExitCode::SUCCESS);
            }
            Cmd::Sweep { experiment, param, values, common } => {
                let exp: Experiment = experiment.parse()?;
                (exp, Some((param, values)), common)
            }
            Cmd::WilsonDecay(c) => (Experiment::WilsonDecay, None, c),
            Cmd::MmCheck(c) => (Experiment::MmCheck, None, c),
            Cmd::IbpCheck(c) => (Experiment::IbpCheck, None, c),
            Cmd::GirsanovCheck(c) => (Experiment::GirsanovCheck, None, c),
            Cmd::LoopExpansion(c) => (Experiment::LoopExpansion, None, c),
            Cmd::SmoothLab(c) => (Experiment::SmoothLab, None, c),
            Cmd::OracleVsField(c) => (Experiment::OracleVsField, None, c),
        };
        let cfg = load_config(&common)?;
        let sweep = sweep.map(|(param, values)| {
            let values = if !values.is_empty() {
                values
            } else if param == "eps" {
                cfg.eps.clone()
            } else if param == "t" {
                cfg.loop_times.clone()
            } else {
                values
            };
            SweepSpec { param, values }
        });
        let threads = init_threads()?;
        execute(exp, sweep, cfg, threads)
    })();
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("ym2: configuration error: {e:#}");
            ExitCode::from(harness::CONFIG_ERROR as u8)
        }
    }
}
