use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn stereobox(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stereobox"))
        .args(args)
        .output()
        .expect("run stereobox")
}

fn ok(args: &[&str]) -> String {
    let out = stereobox(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}

#[test]
fn every_subcommand_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let data = root.join("data");
    fs::write(
        root.join("scene.json"),
        r#"{"noise_sigma": 2.0, "outlier_rate": 0.1}"#,
    )
    .unwrap();
    fs::write(root.join("run.json"), r#"{"eps_conf": 0.0}"#).unwrap();
    fs::write(root.join("thresholds.json"), "{}").unwrap();

    ok(&[
        "synth",
        "--config",
        &p(&root.join("scene.json")),
        "--count",
        "12",
        "--out",
        &p(&data),
    ]);
    assert!(data.join("calib.json").is_file());
    assert_eq!(fs::read_dir(data.join("detections")).unwrap().count(), 12);

    let detections = p(&data.join("detections"));
    let results = p(&root.join("results.json"));
    let reports = p(&root.join("reports.json"));
    let stdout = ok(&[
        "estimate",
        "--detections",
        &detections,
        "--calib",
        &p(&data.join("calib.json")),
        "--config",
        &p(&root.join("run.json")),
        "--out",
        &results,
    ]);
    assert!(stdout.contains("/12 frames solved"), "{stdout}");
    ok(&[
        "certify",
        "--results",
        &results,
        "--masks",
        &p(&data.join("masks")),
        "--thresholds",
        &p(&root.join("thresholds.json")),
        "--out",
        &reports,
    ]);

    let dataset = root.join("dataset.json");
    ok(&["pseudo-label", "--reports", &reports, "--out", &p(&dataset)]);
    let ds: serde_json::Value = serde_json::from_slice(&fs::read(&dataset).unwrap()).unwrap();
    let accepted = ds["accepted"].as_array().unwrap().len();
    let rejected = ds["rejected"].as_array().unwrap().len();
    assert_eq!(accepted + rejected, 12);

    let prompts = root.join("prompts");
    ok(&[
        "sample-prompts",
        "--results",
        &results,
        "--strategy",
        "uniform_simplex",
        "--n",
        "20",
        "--seed",
        "3",
        "--out",
        &p(&prompts),
    ]);
    let first = fs::read_dir(&prompts)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let file: serde_json::Value = serde_json::from_slice(&fs::read(first).unwrap()).unwrap();
    assert_eq!(file["points"].as_array().unwrap().len(), 20);

    let eval = root.join("eval.csv");
    ok(&[
        "eval",
        "--results",
        &results,
        "--truth",
        &detections,
        "--out",
        &p(&eval),
    ]);
    assert!(eval.is_file() && root.join("eval_cdf.csv").is_file());

    let analysis = root.join("analysis");
    ok(&[
        "cert-analysis",
        "--reports",
        &reports,
        "--truth",
        &detections,
        "--out",
        &p(&analysis),
    ]);
    for name in [
        "iou_vs_rmse.csv",
        "residual_vs_choice.csv",
        "epipolar_vs_rmse.csv",
    ] {
        assert!(analysis.join(name).is_file(), "{name}");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(stereobox(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(stereobox(&["synth", "--count", "x"]).status.code(), Some(1));
    let out = stereobox(&[
        "sample-prompts",
        "--results",
        "r.json",
        "--strategy",
        "grid",
        "--n",
        "5",
        "--seed",
        "0",
        "--out",
        "o",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = stereobox(&[
        "synth",
        "--config",
        &p(&root.join("missing.json")),
        "--count",
        "1",
        "--out",
        &p(root),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    // A run config must state its confidence threshold.
    fs::write(root.join("scene.json"), "{}").unwrap();
    fs::write(root.join("run.json"), "{}").unwrap();
    ok(&[
        "synth",
        "--config",
        &p(&root.join("scene.json")),
        "--count",
        "1",
        "--out",
        &p(root),
    ]);
    let out = stereobox(&[
        "estimate",
        "--detections",
        &p(&root.join("detections")),
        "--calib",
        &p(&root.join("calib.json")),
        "--config",
        &p(&root.join("run.json")),
        "--out",
        &p(&root.join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eps_conf"));
}

#[test]
fn pseudo_label_needs_a_certified_batch() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("scene.json"), "{}").unwrap();
    fs::write(root.join("run.json"), r#"{"eps_conf": 0.0}"#).unwrap();
    ok(&[
        "synth",
        "--config",
        &p(&root.join("scene.json")),
        "--count",
        "2",
        "--out",
        &p(root),
    ]);
    let results = p(&root.join("r.json"));
    ok(&[
        "estimate",
        "--detections",
        &p(&root.join("detections")),
        "--calib",
        &p(&root.join("calib.json")),
        "--config",
        &p(&root.join("run.json")),
        "--out",
        &results,
    ]);
    let out = stereobox(&[
        "pseudo-label",
        "--reports",
        &results,
        "--out",
        &p(&root.join("d.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
