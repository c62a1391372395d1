use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hubbard_learn::model::HubbardModel;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hubbard-learn")).args(args).output().expect("binary runs")
}

fn learn(out: &Path, seed: &str) -> Output {
    bin(&["learn", "--seed", seed, "--epsilon", "0.05", "--out", out.to_str().unwrap()])
}

#[test]
fn two_site_learn_writes_ten_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = learn(dir.path(), "4");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("estimates.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "name,truth,estimate,error,half_width");
    assert_eq!(lines.count(), 10);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["n_sites"], 2);
}

#[test]
fn fixed_seed_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(learn(a.path(), "9").status.code(), Some(0));
    assert_eq!(learn(b.path(), "9").status.code(), Some(0));
    let read = |d: &Path| fs::read(d.join("estimates.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn missing_model_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "[model]\nfile = \"does/not/exist.json\"\n").unwrap();
    let out = bin(&["learn", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!dir.path().join("estimates.csv").exists());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "epsilom = 0.1\n").unwrap();
    let out = bin(&["learn", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_needs_three_accuracies() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["sweep", "--epsilons", "0.05", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sweep_writes_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&["sweep", "--epsilons", "0.2,0.1,0.05", "--trials", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "epsilon,seed,t_tot,n_experiments,n_flo,rms_error");
    assert_eq!(csv.lines().count(), 7);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sweep_summary.json")).unwrap()).unwrap();
    assert!(summary["time_slope"].as_f64().unwrap() > 0.5);
}

#[test]
fn validate_passes_and_names_checks() {
    let out = bin(&["validate"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("PASS rotated-mode table, Uy basis"));
    assert!(text.contains("PASS anticommutation relations"));
    assert!(!text.contains("FAIL"));
}

#[test]
fn gen_model_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let out = bin(&["gen-model", "--n-sites", "4", "--topology", "ring", "--seed", "2", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let m = HubbardModel::load(&path).unwrap();
    assert_eq!(m.n_sites(), 4);
    assert_eq!(m.graph.edges().len(), 4);
    assert_eq!(bin(&["gen-model", "--topology", "star", "--out", path.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn tiny_budget_exits_with_budget_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "budget = 1.0\n").unwrap();
    let out = bin(&["learn", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("report.json").exists());
}
