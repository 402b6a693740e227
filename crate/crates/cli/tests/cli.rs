//! Exit codes and the generate → shift → train → evaluate → bench → report flow.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shiftbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftbench"))
        .args(args)
        .env("SHIFTBENCH_THREADS", "2")
        .output()
        .expect("spawn shiftbench")
}

fn ok(args: &[&str]) -> String {
    let out = shiftbench(args);
    assert!(
        out.status.success(),
        "shiftbench {}: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const CONFIG: &str = r#"{
  "n_per_class": 20,
  "hidden": [16],
  "train": {"epochs": 10},
  "uq": {"samples": 3},
  "methods": ["vanilla", "scaling", "mcdropout", "ensemble"],
  "shift_kinds": ["gaussian_noise", "amplitude_distortion"],
  "degrees": [0, 2, 5],
  "ece_buckets": 5
}"#;

#[test]
fn help_and_version_succeed() {
    assert!(shiftbench(&["--help"]).status.success());
    assert!(shiftbench(&["bench", "--help"]).status.success());
    let v = ok(&["--version"]);
    assert!(v.starts_with("shiftbench "));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(shiftbench(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        shiftbench(&["shift", "--kind", "nope", "--degree", "1", "--in", "x", "--out", "y"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(shiftbench(&[]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_and_name_the_cause() {
    let out = shiftbench(&[
        "bench",
        "--config",
        "/definitely/missing.json",
        "--out",
        "/tmp/x",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/definitely/missing.json"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"n_per_class": 10, "bogus_field": 1}"#).unwrap();
    let out = shiftbench(&["bench", "--config", &s(&bad), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_field"));

    let out = shiftbench(&["bench"]);
    assert_eq!(out.status.code(), Some(1));

    let out = shiftbench(&[
        "shift",
        "--kind",
        "gaussian_noise",
        "--degree",
        "6",
        "--in",
        "x",
        "--out",
        "y",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn step_by_step_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("config.json");
    fs::write(&config, CONFIG).unwrap();
    let config = s(&config);

    ok(&[
        "generate",
        "--config",
        &config,
        "--out",
        &s(&d.join("data")),
    ]);
    for split in ["train", "validation", "test"] {
        assert!(d.join("data").join(split).join("manifest.csv").exists());
    }
    let test_manifest = s(&d.join("data/test/manifest.csv"));

    ok(&[
        "shift",
        "--kind",
        "segment_missing",
        "--degree",
        "3",
        "--seed",
        "4",
        "--in",
        &test_manifest,
        "--out",
        &s(&d.join("shifted")),
    ]);
    let shifted = fs::read_to_string(d.join("shifted/manifest.csv")).unwrap();
    let original = fs::read_to_string(d.join("data/test/manifest.csv")).unwrap();
    assert_eq!(shifted.lines().count(), original.lines().count());

    let model = s(&d.join("model/suite.json"));
    ok(&[
        "train",
        "--config",
        &config,
        "--train",
        &s(&d.join("data/train/manifest.csv")),
        "--val",
        &s(&d.join("data/validation/manifest.csv")),
        "--out",
        &model,
    ]);

    let eval = d.join("eval");
    let stdout = ok(&[
        "evaluate",
        "--config",
        &config,
        "--model",
        &model,
        "--test",
        &test_manifest,
        "--method",
        "mcdropout",
        "--kind",
        "gaussian_noise",
        "--degree",
        "2",
        "--out",
        &s(&eval),
        "--passes",
        "--dump-features",
    ]);
    assert!(stdout.contains("accuracy"));
    let metrics = fs::read_to_string(eval.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,shift_kind,degree,accuracy,brier,ece,mean_uncertainty,tpr,tnr,n_samples"
    );
    assert!(lines
        .next()
        .unwrap()
        .starts_with("mcdropout,gaussian_noise,2,"));
    for f in [
        "reliability.csv",
        "predictions.csv",
        "passes.csv",
        "features.csv",
    ] {
        assert!(eval.join(f).exists(), "{f}");
    }

    // Without --passes no per-pass file is written.
    let eval0 = d.join("eval0");
    ok(&[
        "evaluate",
        "--config",
        &config,
        "--model",
        &model,
        "--test",
        &test_manifest,
        "--method",
        "ensemble",
        "--out",
        &s(&eval0),
    ]);
    assert!(!eval0.join("passes.csv").exists());

    let out = shiftbench(&[
        "evaluate",
        "--config",
        &config,
        "--model",
        &model,
        "--test",
        &test_manifest,
        "--method",
        "bayesian",
        "--out",
        &s(&d.join("eval_b")),
    ]);
    assert_eq!(out.status.code(), Some(1), "bayesian was not trained");
}

#[test]
fn bench_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("config.json");
    fs::write(&config, CONFIG).unwrap();
    let out = d.join("run");
    ok(&[
        "bench",
        "--config",
        &s(&config),
        "--seed",
        "9",
        "--out",
        &s(&out),
    ]);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 4 * 2 * 3);
    assert!(out
        .join("figures/trends/gaussian_noise_accuracy.svg")
        .exists());
    let prov: String = fs::read_to_string(out.join("provenance.json")).unwrap();
    assert!(prov.contains("\"seed\": 9"));

    let figures = d.join("again");
    let stdout = ok(&["report", "--in", &s(&out), "--out", &s(&figures)]);
    assert!(stdout.contains("figures"));
    for sub in [
        "trends",
        "reliability",
        "selective_prediction",
        "shift_detection",
        "entropy_histogram",
    ] {
        assert!(figures.join(sub).is_dir(), "{sub}");
    }
    let a = fs::read(out.join("figures/trends/amplitude_distortion_brier.svg")).unwrap();
    let b = fs::read(figures.join("trends/amplitude_distortion_brier.svg")).unwrap();
    assert_eq!(a, b);

    let out = shiftbench(&["report", "--in", &s(&d.join("nowhere"))]);
    assert_eq!(out.status.code(), Some(1));
}
