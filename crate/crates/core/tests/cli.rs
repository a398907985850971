use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ensemble-bridge"))
}

fn config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn check_brownian_reports_unit_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#"{"ensemble": {"family": "brownian"}, "problem": {"t_f": 1.0}}"#);
    let out = run(&cfg, tmp.path(), &["check"]);
    assert_eq!(out.status.code(), Some(0));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["invertible"], true);
    assert!((report["cond"].as_f64().unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn missing_field_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#"{"ensemble": {"family": "brownian"}, "problem": {}}"#);
    let out = run(&cfg, tmp.path(), &["check"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("t_f"));
}

#[test]
fn synthesize_single_step_has_no_gain_blocks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "brownian"}, "problem": {"xf": [1.0], "t_f": 1.0, "steps_k": 1}}"#,
    );
    assert_eq!(run(&cfg, tmp.path(), &["synthesize"]).status.code(), Some(0));
    let g = json(&tmp.path().join("gains.json"));
    assert_eq!(g["open_loop"].as_array().unwrap().len(), 1);
    assert_eq!(g["gain_blocks"], 0);
}

#[test]
fn synthesize_dump_has_triangular_block_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "scalar_theta_drift"}, "problem": {"t_f": 1.0, "steps_k": 64}}"#,
    );
    assert_eq!(run(&cfg, tmp.path(), &["synthesize", "--dump-gains"]).status.code(), Some(0));
    let g = json(&tmp.path().join("gains.json"));
    assert_eq!(g["gain_blocks"], 2016);
    let csv = fs::read_to_string(tmp.path().join("gains.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "i,j,row,col,value");
    assert_eq!(csv.lines().count(), 1 + 2016);
}

#[test]
fn synthesize_rejects_uncontrollable_ensemble() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "rank_deficient_input"}, "problem": {"t_f": 1.0}}"#,
    );
    let out = run(&cfg, tmp.path(), &["synthesize"]);
    assert_eq!(out.status.code(), Some(2));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["invertible"], false);
}

#[test]
fn simulate_writes_one_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "scalar_theta_drift", "n_nodes": 4},
            "problem": {"t_f": 1.0, "steps_k": 16}, "n_paths": 100, "seed": 3}"#,
    );
    assert_eq!(run(&cfg, tmp.path(), &["simulate"]).status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("trajectories.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "path_id,t,x_1,u_1,w_1");
    assert_eq!(lines.count(), 100 * 17);
    let summary = json(&tmp.path().join("summary.json"));
    assert_eq!(summary["n_paths"], 100);
}

#[test]
fn simulate_per_path_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "brownian"}, "problem": {"t_f": 1.0, "steps_k": 8},
            "controller": "markov", "n_paths": 3}"#,
    );
    assert_eq!(run(&cfg, tmp.path(), &["simulate", "--per-path"]).status.code(), Some(0));
    let files = fs::read_dir(tmp.path().join("paths")).unwrap().count();
    assert_eq!(files, 3);
}

#[test]
fn deterministic_noise_free_hits_target() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "brownian"},
            "problem": {"xf": [1.5], "t_f": 1.0, "eps": 0.0, "steps_k": 64},
            "controller": "deterministic", "n_paths": 2}"#,
    );
    assert_eq!(run(&cfg, tmp.path(), &["simulate"]).status.code(), Some(0));
    let summary = json(&tmp.path().join("summary.json"));
    assert!(summary["endpoint_error"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "brownian"}, "problem": {"t_f": 1.0, "steps_k": 8}, "n_paths": 2}"#,
    );
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    run(&cfg, &a, &["--seed", "1", "simulate"]);
    run(&cfg, &b, &["--seed", "2", "simulate"]);
    let read = |d: &Path| fs::read(d.join("trajectories.csv")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn study_table_and_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "brownian"}, "problem": {"t_f": 1.0},
            "study": {"a_list": [100, 1e6], "k_list": [32, 64], "n_paths": 20, "base_seed": 4}}"#,
    );
    assert_eq!(run(&cfg, tmp.path(), &["study"]).status.code(), Some(0));
    let csv = fs::read_to_string(tmp.path().join("study.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "penalty_a,steps_k,n_paths,mean,std,stderr");
    assert_eq!(csv.lines().count(), 5);

    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "brownian"}, "problem": {"t_f": 1.0},
            "study": {"a_list": [], "k_list": [64], "n_paths": 20}}"#,
    );
    assert_eq!(run(&cfg, tmp.path(), &["study"]).status.code(), Some(1));
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(
        tmp.path(),
        r#"{"ensemble": {"family": "constant_system", "a": [[1e8]], "b": [[1.0]]},
            "problem": {"t_f": 5.0, "steps_k": 100}, "controller": "none", "n_paths": 2}"#,
    );
    let out = run(&cfg, tmp.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_subcommand_is_input_error() {
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(1));
}
