use std::path::Path;
use std::process::{Command, Output};

fn noisecar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisecar"))
        .args(args)
        .env_remove("NOISECAR_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn labels(file: &Path) -> Vec<(String, String)> {
    let text = std::fs::read_to_string(file).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let li = header.iter().position(|c| *c == "label").unwrap();
    let ni = header.iter().position(|c| *c == "noisy_label").unwrap();
    lines
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            (cells[li].to_string(), cells[ni].to_string())
        })
        .collect()
}

fn gen(dir: &Path, name: &str, classes: &str, per_class: &str) -> std::path::PathBuf {
    let out = dir.join(name);
    let r = noisecar(&[
        "gen-data",
        "--kind",
        "blobs",
        "--classes",
        classes,
        "--per-class",
        per_class,
        "--dim",
        "2",
        "--seed",
        "7",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

#[test]
fn gen_data_writes_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a.csv", "3", "100");
    let b = gen(dir.path(), "b.csv", "3", "100");
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 301);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn gen_data_rejects_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let r = noisecar(&[
        "gen-data",
        "--kind",
        "blobs",
        "--classes",
        "1",
        "--per-class",
        "5",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 1);
    assert!(!out.exists());
}

#[test]
fn inject_noise_counts_and_mapping() {
    let dir = tempfile::tempdir().unwrap();
    let clean = gen(dir.path(), "clean.csv", "4", "250");

    let sym = dir.path().join("sym.csv");
    let r = noisecar(&[
        "inject-noise",
        "--input",
        path(&clean),
        "--kind",
        "symmetric",
        "--rate",
        "0.4",
        "--seed",
        "1",
        "--out",
        path(&sym),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let rows = labels(&sym);
    assert_eq!(rows.len(), 1000);
    assert_eq!(rows.iter().filter(|(a, b)| a != b).count(), 400);

    let none = dir.path().join("none.csv");
    let r = noisecar(&[
        "inject-noise",
        "--input",
        path(&clean),
        "--kind",
        "symmetric",
        "--rate",
        "0",
        "--out",
        path(&none),
    ]);
    assert_eq!(code(&r), 0);
    assert!(labels(&none).iter().all(|(a, b)| a == b));

    let circ = dir.path().join("circ.csv");
    let r = noisecar(&[
        "inject-noise",
        "--input",
        path(&clean),
        "--kind",
        "asymmetric-circular",
        "--rate",
        "0.3",
        "--out",
        path(&circ),
    ]);
    assert_eq!(code(&r), 0);
    for (a, b) in labels(&circ) {
        let (a, b): (usize, usize) = (a.parse().unwrap(), b.parse().unwrap());
        assert!(b == a || b == (a + 1) % 4, "{a} -> {b}");
    }
}

#[test]
fn inject_noise_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let clean = gen(dir.path(), "clean.csv", "3", "10");
    let out = dir.path().join("o.csv");
    let r = noisecar(&[
        "inject-noise",
        "--input",
        path(&clean),
        "--kind",
        "asymmetric-map",
        "--rate",
        "0.2",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 1);
    let r = noisecar(&[
        "inject-noise",
        "--input",
        path(&clean),
        "--kind",
        "symmetric",
        "--rate",
        "1.5",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 1);
    let missing = dir.path().join("missing.csv");
    let r = noisecar(&[
        "inject-noise",
        "--input",
        path(&missing),
        "--kind",
        "symmetric",
        "--rate",
        "0.2",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&r), 2);
}

fn small_config(dir: &Path, loss: &str, beta: f64, drop: Option<&str>) -> std::path::PathBuf {
    let mut text = format!(
        r#"{{
  "dataset": {{"kind": "blobs", "classes": 3, "per_class": 20, "dim": 2, "separation": 4.0, "spread": 1.0, "seed": 1}},
  "split": {{"test_fraction": 0.25, "seed": 2}},
  "noise": {{"kind": "symmetric", "rate": 0.4, "seed": 3}},
  "train": {{
    "loss": "{loss}", "hidden": [8], "epochs": 6, "batch_size": 8,
    "lr_max": 0.02, "lr_min": 0.001, "period": 3, "momentum": 0.9,
    "weight_decay": 0.001, "lambda": 0.5, "beta": {beta}, "log_zero": -4.0,
    "target_start": 3, "alpha": 0.9, "delta": 0.0, "seed": 4
  }},
  "output_dir": "unused"
}}"#
    );
    if let Some(key) = drop {
        text = text.replace(&format!("\"{key}\": 6, "), "");
    }
    let p = dir.join(format!("{loss}-{beta}.json"));
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn train_writes_outputs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "car", 0.3, None);
    let out = dir.path().join("run");
    let r = noisecar(&["train", path(&cfg), "--out", path(&out), "--quiet"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(summary["seed"], 4);
    assert!(summary["final_test_accuracy"].is_number());
    assert!(summary["wall_clock_seconds"].is_number());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,lr,"));
    assert_eq!(csv.lines().count(), 7);
    assert!(out.join("summary.json").exists());
    assert!(out.join("diagnostics.json").exists());
}

#[test]
fn zero_beta_matches_cal_and_reruns_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let car = small_config(dir.path(), "car", 0.0, None);
    let cal = small_config(dir.path(), "cal", 0.0, None);
    let mut csvs = Vec::new();
    for (i, cfg) in [&car, &cal, &car].into_iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let r = noisecar(&["train", path(cfg), "--out", path(&out), "--quiet"]);
        assert_eq!(code(&r), 0);
        csvs.push(std::fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0], csvs[2]);
}

#[test]
fn seed_env_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "car", 0.3, None);
    let out = dir.path().join("run");
    let r = Command::new(env!("CARGO_BIN_EXE_noisecar"))
        .args(["train", path(&cfg), "--out", path(&out), "--quiet"])
        .env("NOISECAR_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(code(&r), 0);
    let summary: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(summary["seed"], 99);
}

#[test]
fn train_missing_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "car", 0.3, Some("epochs"));
    let r = noisecar(&["train", path(&cfg), "--quiet"]);
    assert_eq!(code(&r), 1);
    assert!(String::from_utf8_lossy(&r.stderr).contains("epochs"));
}

#[test]
fn verify_theory_passes_and_rejects_bad_rate() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("theory.json");
    let r = noisecar(&["verify-theory", "--seeds", "100", "--out", path(&report)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["random_theorem1_checked"], 100);
    assert_eq!(v["random_theorem2_checked"], 100);

    let r = noisecar(&["verify-theory", "--eta", "0.7", "--classes", "2", "--seeds", "1"]);
    assert_eq!(code(&r), 1);
}

#[test]
fn gradcheck_reports_per_loss_errors() {
    let r = noisecar(&["gradcheck", "--cases", "1000"]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["passed"], true);
    let fd = v["finite_difference"].as_array().unwrap();
    assert_eq!(fd.len(), 6);
    for entry in fd {
        assert!(entry["max_rel_err_logits"].as_f64().unwrap() <= 1e-4);
        assert!(entry["max_rel_err_h"].is_number());
    }

    let r = noisecar(&["gradcheck", "--loss", "ce", "--cases", "200"]);
    assert_eq!(code(&r), 0);
    let v: serde_json::Value = serde_json::from_slice(&r.stdout).unwrap();
    assert_eq!(v["finite_difference"][0]["loss"], "ce");
    assert_eq!(v["finite_difference"][0]["max_abs_d_tau"], 0.0);
}

#[test]
fn gradcheck_fails_with_impossible_tolerance() {
    let r = noisecar(&["gradcheck", "--cases", "50", "--tolerance", "1e-300"]);
    assert_eq!(code(&r), 3);
}

#[test]
fn unknown_subcommand_is_usage_error() {
    assert_eq!(code(&noisecar(&["frobnicate"])), 1);
    assert_eq!(code(&noisecar(&["--help"])), 0);
}
