use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &str = "[train]\nepochs = 2\nbatch = 2\nhorizon = 0.5\n\n[verify]\ndraws = 3\nhorizon = 2.0\nradii = [0.05]\nnecessity_draws = 3\nnecessity_horizon = 1.0\n";

fn youla(args: &[&str], run_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_youla")).args(args).env("RUN_DIR", run_dir).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn small_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.display().to_string()
}

#[test]
fn lqr_default_config() {
    let tmp = tempfile::tempdir().unwrap();
    let out = youla(&["lqr"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["hurwitz"], Value::Bool(true));
    let k = v["K"].as_array().unwrap();
    assert_eq!(k.len(), 1);
    assert_eq!(k[0].as_array().unwrap().len(), 4);
}

#[test]
fn lqr_zero_input_matrix_is_not_stabilizable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("b0.toml");
    std::fs::write(&cfg, "[lqr]\nq = [1.0, 1.0]\nr = [1.0]\na = [[0.0, 1.0], [1.0, 0.0]]\nb = [[0.0], [0.0]]\n").unwrap();
    let out = youla(&["lqr", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not stabilizable"));
}

#[test]
fn malformed_config_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nepochs = 3\nlr = = 2\n").unwrap();
    let out = youla(&["lqr", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(youla(&["fly"], tmp.path()).status.code(), Some(1));
    assert_eq!(youla(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn train_is_deterministic_and_self_describing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for root in [&a, &b] {
        let out = youla(&["train", "--config", &cfg, "--policy", "youla", "--seed", "0", "--quiet"], root);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let run = |root: &Path| root.join("youla").join("seed0");
    let curve_a = std::fs::read_to_string(run(&a).join("curve.csv")).unwrap();
    assert_eq!(curve_a, std::fs::read_to_string(run(&b).join("curve.csv")).unwrap());
    assert_eq!(curve_a.lines().count(), 3);
    assert!(curve_a.starts_with("epoch,mean_cost,min_cost,max_cost\n"));
    for f in ["config.resolved.toml", "checkpoint.json", "summary.json", "trajectories/nominal.csv"] {
        assert!(run(&a).join(f).is_file(), "missing {f}");
    }

    // The resolved config alone reproduces the curve.
    let c = tmp.path().join("c");
    let resolved = run(&a).join("config.resolved.toml");
    let out = youla(&["train", "--config", resolved.to_str().unwrap(), "--quiet"], &c);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(curve_a, std::fs::read_to_string(run(&c).join("curve.csv")).unwrap());

    let ck = run(&a).join("checkpoint.json");
    let out = youla(&["eval", "--config", &cfg, "--checkpoint", ck.to_str().unwrap(), "--x0", "0,0,-0.05,0"], &a);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["penetrations"], Value::from(0));
    assert!(v["cost"].as_f64().unwrap() > 0.0);

    let out = youla(&["verify", "les", "--config", &cfg, "--checkpoint", ck.to_str().unwrap(), "--draws", "3"], &a);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["hurwitz_pass_rate"].as_f64(), Some(1.0));
    assert_eq!(v["decay_fits"].as_array().unwrap().len(), 3);
    assert_eq!(v["tail_checks"].as_array().unwrap().len(), 3);
}

#[test]
fn seeds_write_envelope_and_compare() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let root = tmp.path().join("runs");
    let out = youla(&["train", "--config", &cfg, "--policy", "youla", "--seeds", "0,1", "--quiet"], &root);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let env = std::fs::read_to_string(root.join("youla").join("envelope.csv")).unwrap();
    assert_eq!(env.lines().count(), 3);
    let out = youla(&["train", "--config", &cfg, "--policy", "pure_mlp", "--seed", "0", "--quiet"], &root);
    assert_eq!(out.status.code(), Some(0));

    let y = root.join("youla").join("seed0");
    let m = root.join("pure_mlp").join("seed0");
    let csv = tmp.path().join("merged.csv");
    let out = youla(
        &["compare", y.to_str().unwrap(), y.to_str().unwrap(), m.to_str().unwrap(), "--csv", csv.to_str().unwrap()],
        &root,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    // Identical runs give identical rows apart from the label.
    assert_eq!(rows[0].split_once(' ').unwrap().1, rows[1].split_once(' ').unwrap().1);
    assert!(rows[0].contains(" true "), "{table}");
    assert!(rows[2].contains(" n/a "), "{table}");
    assert!(std::fs::read_to_string(csv).unwrap().starts_with("epoch,run0_mean,run0_min,run0_max,run1_mean"));
}

#[test]
fn compare_empty_dir_names_missing_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = youla(&["compare", tmp.path().to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("summary.json"));
}

#[test]
fn necessity_report_matches_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = youla(&["verify", "necessity", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert!(v["max_input_deviation"].as_f64().unwrap() <= 1e-8);
    assert_eq!(v["static"]["n_q"], Value::from(4));
    assert_eq!(v["dynamic"]["n_q"], Value::from(6));
    assert_eq!(v["dynamic"]["equivalence"].as_array().unwrap().len(), 3);
}
