use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ym2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ym2")).args(args).env("YM2_THREADS", "1").output().expect("run ym2")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn smoke_run_passes_with_a_loose_threshold_and_writes_a_manifest() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "samples = 100\nthreshold = 1e6\n");
    let out = d.path().join("out");
    let o = ym2(&["mm-check", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("mm-check.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], true);
    assert_eq!(m["exit_status"], 0);
    assert_eq!(m["config"]["samples"], 100);
    assert!(m["started"].as_str().is_some() && m["seed_derivation"].as_str().is_some());
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("experiment,group,check,params"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("mm_lhs_vs_rhs"));
}

#[test]
fn reruns_with_the_same_seed_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "group = u1\nsamples = 300\nseed = 17\n");
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for dir in [&a, &b] {
        let o = ym2(&["wilson-decay", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert!(matches!(o.status.code(), Some(0 | 1)));
    }
    for f in ["wilson-decay.jsonl", "results.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let o = ym2(&["wilson-decay", "--config", &cfg, "--seed", "18", "--out", d.path().join("c").to_str().unwrap()]);
    assert!(matches!(o.status.code(), Some(0 | 1)));
    assert_ne!(fs::read(a.join("wilson-decay.jsonl")).unwrap(), fs::read(d.path().join("c/wilson-decay.jsonl")).unwrap());
}

#[test]
fn degenerate_sweep_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    let o = ym2(&["sweep", "mm-check", "--param", "eps", "--values", "0.1,0.1,0.1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("monotone"));
    assert!(!out.join("mm-check.sweep-eps.jsonl").exists());
}

#[test]
fn off_grid_geometry_names_the_parameter() {
    let d = tempfile::tempdir().unwrap();
    let cfg = write_config(d.path(), "t1 = 0.33\n");
    let o = ym2(&["mm-check", "--config", &cfg, "--out", d.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("t1"));
    let o = ym2(&["wilson-decay", "--samples", "50"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("samples"));
}

#[test]
fn failing_checks_exit_with_one() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("out");
    // A zero-width band cannot hold a fitted slope.
    let o = ym2(&[
        "sweep", "smooth-lab", "--param", "eps", "--values", "0.4,0.2,0.1", "--group", "u1",
        "--set", "remainder_slope_band=[0.0,0.0]", "--set", "smooth_steps=200", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("smooth-lab.sweep-eps.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["pass"], false);
    assert_eq!(m["sweep"]["param"], "eps");
}

#[test]
fn print_config_output_is_a_valid_config() {
    let d = tempfile::tempdir().unwrap();
    let o = ym2(&["print-config", "--group", "sun:3", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("group = \"sun:3\"") && text.contains("seed = 5"));
    let cfg = write_config(d.path(), &text);
    let again = ym2(&["print-config", "--config", &cfg]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}
