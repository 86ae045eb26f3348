use std::path::Path;
use std::process::Command;

use primelab::cli::{run_with, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use serde_json::{json, Value};

fn main_with<const N: usize>(args: [&str; N]) -> i32 {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    run_with(args, &mut out, &mut err)
}

fn write_config(dir: &Path, name: &str, parameters: Value) -> String {
    let path = dir.join(format!("{name}.json"));
    let spec = json!({"name": name, "parameters": parameters, "seeds": [0]});
    std::fs::write(&path, serde_json::to_vec(&spec).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

fn tiny_theory() -> Value {
    json!({
        "trajectory": {"instances": 3, "steps": [1, 7]},
        "ladder": {"dims": [4, 8], "n": 32, "seeds": [0, 1]},
        "e_bound": {"t": [2, 5], "grid": 1000},
        "concentration": {"n": 400, "d": 4, "trials": 2, "lower": 0.5, "upper": 1.5},
        "theorem": {"d": 4, "n": 64, "m": 32, "n_test": 32},
        "theorem_trials": 1,
        "theorem_min_passes": 0
    })
}

#[test]
fn usage_errors_exit_1() {
    for args in [
        vec!["primelab"],
        vec!["primelab", "nope"],
        vec!["primelab", "toy-table", "--format", "xml"],
        vec!["primelab", "theory", "--seed", "minus-one"],
    ] {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run_with(args.clone(), &mut out, &mut err), EXIT_USAGE, "{args:?}");
        assert!(!err.is_empty());
    }
    let (mut out, mut err) = (Vec::new(), Vec::new());
    assert_eq!(run_with(["primelab", "--help"], &mut out, &mut err), EXIT_OK);
    assert!(String::from_utf8(out).unwrap().contains("toy-table"));
}

#[test]
fn bad_configs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let unknown = write_config(dir.path(), "toy-table", json!({"bogus": 1}));
    assert_eq!(main_with(["primelab", "toy-table", "--config", &unknown, "--out", out]), EXIT_USAGE);
    let other = write_config(dir.path(), "theory", json!({}));
    assert_eq!(main_with(["primelab", "copycat", "--config", &other, "--out", out]), EXIT_USAGE);
    let missing = dir.path().join("missing.json");
    assert_eq!(
        main_with(["primelab", "theory", "--config", missing.to_str().unwrap(), "--out", out]),
        EXIT_FAILURE
    );
    std::fs::write(dir.path().join("broken.json"), "{").unwrap();
    let broken = dir.path().join("broken.json");
    assert_eq!(main_with(["primelab", "theory", "--config", broken.to_str().unwrap()]), EXIT_USAGE);
}

#[test]
fn failed_check_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "toy-table",
        json!({"n_train": 20, "eval_points": 16, "hidden": [4], "zetas": [{"kind": "zero"}],
               "train": {"step_size": 1e-3, "steps": 2}}),
    );
    let out = dir.path().join("out");
    let code = main_with(["primelab", "toy-table", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_FAILURE);
    assert_eq!(manifest(&out)["all_passed"], false);
    assert!(out.join("rmse_table.csv").exists());
}

#[test]
fn exit_status_follows_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "theory", tiny_theory());
    let out = dir.path().join("out");
    let code = main_with([
        "primelab",
        "theory",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "3",
        "--format",
        "json",
    ]);
    let m = manifest(&out);
    assert_eq!(m["seeds"], json!([3]));
    assert_eq!(m["format"], "json");
    assert_eq!(m["csv_schema_version"], 1);
    let expected = if m["all_passed"] == true { EXIT_OK } else { EXIT_FAILURE };
    assert_eq!(code, expected);
    assert!(out.join("theory_report.json").exists());
}

#[test]
fn binary_reports_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "theory", tiny_theory());
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_primelab"))
        .args(["theory", "--config", &cfg, "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")), "{stdout}");
    assert!(stdout.contains("manifest.json"));
    let all_passed = manifest(&out)["all_passed"] == true;
    assert_eq!(o.status.code(), Some(if all_passed { 0 } else { 2 }));

    let o = Command::new(env!("CARGO_BIN_EXE_primelab")).arg("bogus").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
