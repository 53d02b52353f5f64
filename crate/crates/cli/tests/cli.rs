use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn risknav(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_risknav"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn without_wall_time(mut v: Value) -> Value {
    match &mut v {
        Value::Object(m) => {
            m.remove("wall_time");
            m.remove("mean_wall_time");
            for x in m.values_mut() {
                *x = without_wall_time(x.take());
            }
        }
        Value::Array(a) => {
            for x in a.iter_mut() {
                *x = without_wall_time(x.take());
            }
        }
        _ => {}
    }
    v
}

#[test]
fn calibrate_small_set() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "alpha = 0.5\nn_cal = 10\n");
    let o = risknav(&["calibrate", "--config", &cfg, "--out", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("delta = "));
    let v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("out/calibration.json")).unwrap()).unwrap();
    assert_eq!(v["n_cal"], 10);
    assert!(v["delta"].as_f64().unwrap() >= 1.0);
}

#[test]
fn calibrate_too_few_records_is_calibration_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "alpha = 0.05\nn_cal = 4\n");
    let o = risknav(&["calibrate", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "u.toml", "kapa = 3.3\n");
    assert_eq!(risknav(&["calibrate", "--config", &unknown], tmp.path()).status.code(), Some(2));
    let invalid = write_config(tmp.path(), "i.toml", "eta = -1.0\n");
    assert_eq!(risknav(&["simulate", "--config", &invalid], tmp.path()).status.code(), Some(2));
    assert_eq!(risknav(&["calibrate", "--config", "missing.toml"], tmp.path()).status.code(), Some(2));
    assert_eq!(risknav(&["simulate", "--method", "other"], tmp.path()).status.code(), Some(2));
    let zero = write_config(tmp.path(), "z.toml", "delta = 1.2\n");
    assert_eq!(risknav(&["benchmark", "--config", &zero, "--trials", "0"], tmp.path()).status.code(), Some(2));
}

#[test]
fn simulate_obstacle_free_succeeds_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "min_obstacles = 0\nmax_obstacles = 0\ndelta = 1.3\n");
    let run = |out: &str| {
        let o = risknav(&["simulate", "--config", &cfg, "--seed", "4", "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).contains("success"));
    };
    run("a");
    run("b");
    let read = |p: &str| fs::read(tmp.path().join(p)).unwrap();
    assert_eq!(read("a/trial_4_proposed.csv"), read("b/trial_4_proposed.csv"));
    let outcome = |p: &str| without_wall_time(serde_json::from_slice(&read(p)).unwrap());
    let a = outcome("a/outcome_4_proposed.json");
    assert_eq!(a, outcome("b/outcome_4_proposed.json"));
    assert_eq!(a["success"], true);
    assert_eq!(a["collision"], false);
}

#[test]
fn simulate_without_feasibility_layer_reports_infeasible_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "delta = 1.35\nhorizon = 20.0\n");
    let o = risknav(&["simulate", "--config", &cfg, "--seed", "5", "--method", "no-feasibility", "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("o/outcome_5_nofeasibility.json")).unwrap()).unwrap();
    assert_eq!(v["method"], "nofeasibility");
    assert!(v["infeasible_steps"].as_u64().unwrap() > 0);
    assert_eq!(v["collision"], false);
    let flags = ["success", "collision", "timeout"].iter().filter(|k| v[**k] == true).count();
    assert_eq!(flags, 1);
}

#[test]
fn benchmark_tables_and_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "delta = 1.35\nhorizon = 1.0\n");
    let o = risknav(&["benchmark", "--config", &cfg, "--trials", "1", "--out", "all"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    for m in ["proposed", "uninflated", "nofeasibility"] {
        assert!(table.lines().any(|l| l.starts_with(m)), "{table}");
    }
    let csv = fs::read_to_string(tmp.path().join("all/benchmark.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let o = risknav(&["benchmark", "--config", &cfg, "--trials", "2", "--methods", "proposed", "--out", "one"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let rows: Vec<_> = stdout(&o).lines().skip(1).map(str::to_owned).collect();
    assert_eq!(rows.len(), 1, "{rows:?}");
    assert!(rows[0].starts_with("proposed"));
}

#[test]
fn benchmark_is_reproducible_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "delta = 1.35\nhorizon = 1.0\n");
    for (out, workers) in [("w1", "1"), ("w2", "2")] {
        let o = risknav(&["benchmark", "--config", &cfg, "--trials", "3", "--seed", "9", "--workers", workers, "--out", out], tmp.path());
        assert_eq!(o.status.code(), Some(0));
    }
    let load = |p: &str| -> Value {
        without_wall_time(serde_json::from_str(&fs::read_to_string(tmp.path().join(p)).unwrap()).unwrap())
    };
    assert_eq!(load("w1/benchmark.json"), load("w2/benchmark.json"));
}

#[test]
fn gradcheck_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = risknav(&["gradcheck", "--instances", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2);
    assert!(out.lines().all(|l| l.contains(" 1 instances") && l.ends_with("PASS")), "{out}");

    let o = risknav(&["gradcheck", "--instances", "5", "--tolerance", "1e-12"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}
