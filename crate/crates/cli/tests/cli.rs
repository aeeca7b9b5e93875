use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lcc"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn small_config(dir: &Path, extra: Value) -> PathBuf {
    let mut config = json!({
        "experiment": "swissroll",
        "swiss_roll": { "n_unlabeled": 300, "n_labeled": 60, "n_validation": 40, "n_test": 80 },
        "tuning": {
            "mu_grid": [0.01, 0.1],
            "beta_grid": [0.1, 1.0],
            "ridge_lambda_grid": [0.01],
            "smoother_k": [5]
        },
        "learning": { "codebook_size": 16, "n_iters": 2 },
        "coding": { "mu": 0.1 }
    });
    for (k, v) in extra.as_object().unwrap() {
        config[k] = v.clone();
    }
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

fn error_json(output: &Output) -> Value {
    let text = String::from_utf8_lossy(&output.stderr);
    let line = text.lines().last().expect("stderr carries an error report");
    serde_json::from_str(line).expect("error report is JSON")
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
}

#[test]
fn malformed_config_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, "{\"experiment\": \"swissroll\", \"bogus\": 1}").unwrap();
    let out = run(&["gen-data", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "malformed-config");

    std::fs::write(&path, "not json").unwrap();
    let out = run(&["gen-data", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn missing_files_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--config", dir.path().join("absent.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(error_json(&out)["error"], "missing-file");

    let config = small_config(dir.path(), json!({}));
    let out = run(&["encode", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn run_experiment_is_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let mut outputs = Vec::new();
    for (name, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "run-experiment",
            "--config",
            config.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(std::fs::read(out_dir.join("results.json")).unwrap());
        assert!(out_dir.join("locality_lcc.csv").exists());
        assert!(out_dir.join("locality_lcc_hist.csv").exists());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);

    let results: Value = serde_json::from_slice(&outputs[0]).unwrap();
    let methods: Vec<&str> = results["swissroll"]["methods"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods, ["sparse-fixed", "lcc-fixed", "sparse-learned", "lcc-learned"]);
    assert!(results["swissroll"]["kernel_smoothing"]["test_rmse"].as_f64().unwrap() > 0.0);
    assert_eq!(results["config"]["learning"]["codebook_size"], 16);
}

#[test]
fn seed_flag_changes_the_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({}));
    let read = |seed: &str, name: &str| {
        let out_dir = dir.path().join(name);
        let out = run(&["gen-data", "--config", config.to_str().unwrap(), "--seed", seed, "--out", out_dir.to_str().unwrap()]);
        assert!(out.status.success());
        std::fs::read_to_string(out_dir.join("train.csv")).unwrap()
    };
    assert_eq!(read("7", "a"), read("7", "b"));
    assert_ne!(read("7", "c"), read("8", "d"));
}

fn pipeline(dir: &Path, config: &Path) {
    for cmd in ["gen-data", "learn-codebook", "encode", "train", "predict", "eval", "diagnose-locality"] {
        let out = run(&[cmd, "--config", config.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn huge_lambda_matches_the_zero_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({ "lambda": 1e9 }));
    pipeline(dir.path(), &config);
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let rmse = metrics["rmse"].as_f64().unwrap();
    let baseline = metrics["baseline_rmse"].as_f64().unwrap();
    assert!((rmse - baseline).abs() <= 1e-6, "{rmse} vs {baseline}");

    for name in ["codebook.json", "codebook.csv", "codes.jsonl", "test_codes.jsonl", "model.json", "predictions.csv", "locality.csv", "locality_hist.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let predictions = std::fs::read_to_string(dir.path().join("predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 81);
}

#[test]
fn moderate_lambda_beats_the_zero_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path(), json!({ "lambda": 1e-3 }));
    pipeline(dir.path(), &config);
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["rmse"].as_f64().unwrap() < metrics["baseline_rmse"].as_f64().unwrap());
}

#[test]
fn cover_verify_writes_report_and_cover() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"experiment": "cover-verify", "cover": {"n_points": 500, "epsilons": [0.6, 0.3], "m": 1}}"#).unwrap();
    let out = run(&["cover-verify", "--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("cover_report.json")).unwrap()).unwrap();
    assert_eq!(report["all_sum_to_one"], true);
    let cover: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("cover.json")).unwrap()).unwrap();
    assert_eq!(cover["m"], 1);
}
