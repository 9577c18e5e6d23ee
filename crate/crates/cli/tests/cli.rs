use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gfm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gfm-bess"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GFM_BESS_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn short(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = vec!["--t-step", "0.01", "--t-end", "0.05", "--stride", "1e-3"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn help_and_version_exit_zero() {
    let dir = TempDir::new().unwrap();
    assert_eq!(gfm(&["--help"], dir.path()).status.code(), Some(0));
    assert_eq!(gfm(&["--version"], dir.path()).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_one() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["frobnicate"],
        vec!["simulate", "--order", "3"],
        vec!["simulate", "--t-step", "1", "--t-end", "0.5"],
        vec!["sweep", "cdc", "--values", "0.5mF,abc"],
        vec!["sweep", "kpred", "--values", "1,2"],
        vec!["simulate", "--config", "/definitely/not/here.cfg"],
    ] {
        let out = gfm(&args, dir.path());
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn bad_config_key_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "dc.c_dc = 2e-3\nnot.a_key = 1\n").unwrap();
    let out = gfm(&["simulate", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not.a_key"));
}

#[test]
fn simulate_writes_outputs_deterministically() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let mut args = vec!["simulate"];
    args.extend(short(&[]));
    assert_eq!(gfm(&args, a.path()).status.code(), Some(0));
    let mut args_b = args.clone();
    args_b.extend(["--workers", "3"]);
    assert_eq!(gfm(&args_b, b.path()).status.code(), Some(0));
    for name in ["trajectory.csv", "summary.txt", "manifest.json"] {
        let x = fs::read(a.path().join(name)).unwrap();
        let y = fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let csv = fs::read_to_string(a.path().join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert!(header.starts_with("time,"));
    assert!(header.contains("v_dc"));
    assert_eq!(csv.lines().count(), 1 + 51);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
    assert!(manifest.get("workers").is_none());
}

#[test]
fn config_dir_env_is_used() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("default.cfg"), "dc.c_dc = 4e-3\n").unwrap();
    let run = |env: bool, out: &Path| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_gfm-bess"));
        c.args(["linearize", "--out"]).arg(out);
        if env {
            c.env("GFM_BESS_CONFIG_DIR", dir.path());
        } else {
            c.env_remove("GFM_BESS_CONFIG_DIR");
        }
        assert_eq!(c.output().unwrap().status.code(), Some(0));
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
        m["config_digest"].as_str().unwrap().to_string()
    };
    let with = run(true, &dir.path().join("a"));
    let without = run(false, &dir.path().join("b"));
    assert_ne!(with, without);
}

#[test]
fn linearize_reports_modes() {
    let dir = TempDir::new().unwrap();
    let out = gfm(&["linearize", "--order", "0"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let modes = fs::read_to_string(dir.path().join("modes.txt")).unwrap();
    assert_eq!(modes.lines().filter(|l| !l.starts_with('#')).count(), 22);
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert!(summary.contains("zero_modes = 1"));
}

#[test]
fn compare_orders_shares_time_grid() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["compare-orders", "--orders", "0,4"];
    args.extend(short(&[]));
    assert_eq!(gfm(&args, dir.path()).status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("compare_orders.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "time,v_dc_order0,v_dc_order4");
    assert_eq!(csv.lines().count(), 1 + 51);
}

#[test]
fn empty_feasible_set_is_reported() {
    let dir = TempDir::new().unwrap();
    let mut args = vec![
        "tune",
        "--step",
        "5",
        "--k-max",
        "5",
        "--lambda-crit",
        "-1000",
    ];
    args.extend(short(&[]));
    let out = gfm(&args, dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no feasible gains"));
    let csv = fs::read_to_string(dir.path().join("tuning.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 16);
    assert!(dir.path().join("manifest.json").is_file());
}

#[test]
fn kpred_sweep_writes_rows() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["sweep", "kpred", "--values", "0,1"];
    args.extend(short(&[]));
    assert_eq!(gfm(&args, dir.path()).status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("kpred.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
