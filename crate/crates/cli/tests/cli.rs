use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use vfg::io::{write_crashes, write_detectors};
use vfg::synth::{world, WorldConfig};

const QUICK: &str = r#"{
  "seed": 3,
  "gan": {"epochs": 5, "architecture": {"noise_dim": 8, "pass_noise_dim": 4, "static_hidden": [16], "lstm_hidden": 16, "disc_hidden": [32]}},
  "predictor": {"d_model": 16, "heads": 2, "layers": 1, "feed_forward": 32, "hidden": 16, "epochs": 2},
  "generate": {"count": 200},
  "demo": {"world": {"days": 14, "ordinary_crashes": 60, "planted_pairs": 8}}
}"#;

fn vfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfg")).args(args).env_remove("VFG_CONFIG").output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

/// Exit code and the JSON error line from stderr.
fn failure(out: &Output) -> (i32, Value) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr has an error line");
    (out.status.code().unwrap(), serde_json::from_str(line).expect("error line is JSON"))
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    crashes: PathBuf,
    detectors: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_owned();
    let w = world(&WorldConfig { seed: 4, days: 14, ordinary_crashes: 60, planted_pairs: 8, ..WorldConfig::default() })
        .unwrap();
    let crashes = root.join("crashes.csv");
    let detectors = root.join("detectors.csv");
    write_crashes(fs::File::create(&crashes).unwrap(), &w.crashes).unwrap();
    write_detectors(fs::File::create(&detectors).unwrap(), &w.readings).unwrap();
    let config = root.join("config.json");
    fs::write(&config, QUICK).unwrap();
    Fixture { _dir: dir, root, config, crashes, detectors }
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn stage_by_stage_pipeline() {
    let f = fixture();
    let out = f.root.join("run");
    let (cfg, o) = (s(&f.config), s(&out));
    let summary = ok(&vfg(&[
        "identify",
        "--config",
        cfg,
        "--crashes",
        s(&f.crashes),
        "--detectors",
        s(&f.detectors),
        "--out",
        o,
        "--contours",
    ]));
    assert_eq!(summary["secondary"], 8);
    assert_eq!(summary["contours"].as_array().unwrap().len(), summary["investigated"].as_u64().unwrap() as usize);

    let labels = out.join("labels.csv");
    let base = [
        "--config",
        cfg,
        "--crashes",
        s(&f.crashes),
        "--detectors",
        s(&f.detectors),
        "--labels",
        s(&labels),
        "--out",
        o,
    ];
    let summary = ok(&vfg(&[&["prepare"][..], &base].concat()));
    assert_eq!(summary["train"]["secondary"].as_u64().unwrap() + summary["test"]["secondary"].as_u64().unwrap(), 8);
    let train = out.join("train.ndjson");
    ok(&vfg(&["train-gan", "--config", cfg, "--train", s(&train), "--out", o]));
    let gen =
        ok(&vfg(&["generate", "--config", cfg, "--gan-model", s(&out.join("gan.ckpt")), "--count", "120", "--out", o]));
    assert_eq!(gen["count"], 120);

    // Rebalance into a separate directory so the raw split stays in place.
    let balanced = f.root.join("balanced");
    let generated = out.join("generated.ndjson");
    let b = s(&balanced);
    let mut args = vec!["prepare", "--ratio", "1:1", "--generated", s(&generated)];
    args.extend_from_slice(&base[..base.len() - 1]);
    args.push(b);
    let summary = ok(&vfg(&args));
    assert_eq!(summary["train"]["secondary"], summary["train"]["other"]);
    assert!(summary["generated_used"].as_u64().unwrap() > 0);

    let bal_train = balanced.join("train.ndjson");
    ok(&vfg(&["train-predictor", "--config", cfg, "--train", s(&bal_train), "--out", o]));
    let test = out.join("test.ndjson");
    let model = out.join("predictor.ckpt");
    let summary =
        ok(&vfg(&["predict", "--config", cfg, "--predictor-model", s(&model), "--test", s(&test), "--out", o]));
    assert_eq!(summary["samples"], ok_count_lines(&test));
    let preds = out.join("predictions.csv");
    let metrics = ok(&vfg(&[
        "evaluate",
        "--config",
        cfg,
        "--test",
        s(&test),
        "--predictions",
        s(&preds),
        "--train",
        s(&train),
        "--generated",
        s(&generated),
        "--out",
        o,
    ]));
    assert_eq!(metrics["runs"][0]["metrics"]["samples"], ok_count_lines(&test));
    assert!(metrics["fidelity"]["length_ks"].is_number());

    let report = f.root.join("report");
    let summary = ok(&vfg(&["report", "--run-dir", o, "--out", s(&report)]));
    assert!(summary["panels"].as_array().unwrap().iter().all(|p| p["status"] == "present"));
    assert!(report.join("box_accuracy.svg").exists() && report.join("ratio_table.md").exists());

    let m = manifest(&out);
    let stages: Vec<&str> = m["stages"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(stages, ["identify", "prepare", "train-gan", "generate", "train-predictor", "predict", "evaluate"]);
    let paths: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|a| a["path"].as_str().unwrap()).collect();
    for expected in [
        "labels.csv",
        "train.ndjson",
        "gan.ckpt",
        "generated.ndjson",
        "predictor.ckpt",
        "predictions.csv",
        "metrics.json",
    ] {
        assert!(paths.contains(&expected), "{expected} missing from {paths:?}");
    }
    assert!(!paths.iter().any(|p| p.starts_with(".staging")));
    let timings: Value = serde_json::from_slice(&fs::read(out.join("timings.json")).unwrap()).unwrap();
    assert_eq!(timings.as_object().unwrap().len(), stages.len());
}

fn ok_count_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.trim().is_empty()).count()
}

#[test]
fn config_errors_exit_two() {
    let f = fixture();
    let out = f.root.join("o");
    let (code, err) = failure(&vfg(&["identify", "--config", s(&f.root.join("missing.json")), "--out", s(&out)]));
    assert_eq!((code, err["error"].as_str()), (2, Some("config")));

    let bad = f.root.join("bad.json");
    fs::write(&bad, r#"{"gan": {"epochz": 3}}"#).unwrap();
    let (code, _) = failure(&vfg(&["train-gan", "--config", s(&bad), "--out", s(&out)]));
    assert_eq!(code, 2);

    fs::write(&bad, r#"{"prepare": {"test_fraction": 1.5}}"#).unwrap();
    assert_eq!(failure(&vfg(&["prepare", "--config", s(&bad), "--out", s(&out)])).0, 2);

    // A required input that was never configured.
    let (code, err) = failure(&vfg(&["identify", "--out", s(&out)]));
    assert_eq!(code, 2);
    assert!(err["message"].as_str().unwrap().contains("--crashes"));
}

#[test]
fn data_errors_exit_three_and_quarantine_partial_outputs() {
    let f = fixture();
    let out = f.root.join("o");
    let missing = f.root.join("nope.csv");
    let (code, err) =
        failure(&vfg(&["identify", "--crashes", s(&missing), "--detectors", s(&f.detectors), "--out", s(&out)]));
    assert_eq!((code, err["error"].as_str()), (3, Some("data")));
    assert!(out.join("quarantine/identify").is_dir());
    assert!(!out.join("labels.csv").exists());
    assert!(!out.join("manifest.json").exists());

    // A corrupt checkpoint.
    let junk = f.root.join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let (code, _) = failure(&vfg(&["generate", "--gan-model", s(&junk), "--out", s(&out)]));
    assert_eq!(code, 3);
    assert!(out.join("quarantine/generate").is_dir());

    // A malformed crash file.
    fs::write(&missing, "crash_id,timestamp\nx,y\n").unwrap();
    let (code, _) =
        failure(&vfg(&["identify", "--crashes", s(&missing), "--detectors", s(&f.detectors), "--out", s(&out)]));
    assert_eq!(code, 3);
    assert!(out.join("quarantine/identify-2").is_dir());
}

#[test]
fn numeric_failure_exits_four() {
    let f = fixture();
    let out = f.root.join("o");
    ok(&vfg(&["identify", "--crashes", s(&f.crashes), "--detectors", s(&f.detectors), "--out", s(&out)]));
    ok(&vfg(&[
        "prepare",
        "--crashes",
        s(&f.crashes),
        "--detectors",
        s(&f.detectors),
        "--labels",
        s(&out.join("labels.csv")),
        "--out",
        s(&out),
    ]));
    let cfg = f.root.join("explode.json");
    fs::write(&cfg, r#"{"predictor": {"d_model": 16, "heads": 2, "layers": 1, "feed_forward": 32, "hidden": 16, "epochs": 2, "learning_rate": 1e300}}"#).unwrap();
    let (code, err) = failure(&vfg(&[
        "train-predictor",
        "--config",
        s(&cfg),
        "--train",
        s(&out.join("train.ndjson")),
        "--out",
        s(&out),
    ]));
    assert_eq!((code, err["error"].as_str()), (4, Some("numeric")));
    assert!(!out.join("predictor.ckpt").exists());
}

#[test]
fn report_without_inputs_marks_panels_absent() {
    let f = fixture();
    let empty = f.root.join("empty");
    fs::create_dir_all(&empty).unwrap();
    let summary = ok(&vfg(&["report", "--run-dir", s(&empty), "--out", s(&f.root.join("r"))]));
    let panels = summary["panels"].as_array().unwrap();
    assert!(panels.len() >= 5);
    assert!(panels.iter().all(|p| p["status"] == "absent" && p["note"].is_string()));
    assert!(f.root.join("r/report.json").exists());
}

#[test]
fn flags_and_environment_override_the_config() {
    let f = fixture();
    let cfg = f.root.join("c.json");
    fs::write(&cfg, r#"{"seed": 1, "output": {"contours": false}}"#).unwrap();
    let out = f.root.join("o");
    let run = Command::new(env!("CARGO_BIN_EXE_vfg"))
        .args([
            "identify",
            "--seed",
            "9",
            "--contours",
            "--crashes",
            s(&f.crashes),
            "--detectors",
            s(&f.detectors),
            "--out",
            s(&out),
        ])
        .env("VFG_CONFIG", &cfg)
        .output()
        .unwrap();
    let summary = ok(&run);
    assert!(!summary["contours"].as_array().unwrap().is_empty());
    assert_eq!(manifest(&out)["seed"], 9);
    let recorded: Value = serde_json::from_slice(&fs::read(out.join("config.identify.json")).unwrap()).unwrap();
    assert_eq!(recorded["seed"], 9);
    assert_eq!(recorded["output"]["contours"], true);
}
