mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::PAPAYA_TEXT;
use cropwise_core::models::ModelArtifact;
use serde_json::Value;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/dt_fixture_v1.json");

fn fixture_csv() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/fixture.csv")
}

fn cropwise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cropwise")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn train(dir: &Path, kind: &str) -> String {
    let path = dir.join(format!("{kind}.json"));
    let (data, out) = (fixture_csv(), path.to_str().unwrap().to_string());
    stdout(&cropwise(&["train", "--kind", kind, "--data", data.to_str().unwrap(), "--out", &out]));
    out
}

#[test]
fn train_writes_an_artifact_and_prints_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = dir.path().join("rf.json");
    let text = stdout(&cropwise(&[
        "train",
        "--kind",
        "rf",
        "--data",
        fixture_csv().to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--report-json",
        report.to_str().unwrap(),
        "--background-size",
        "12",
    ]));
    assert!(text.contains("F1-Score") && text.contains("papaya"));
    let artifact = ModelArtifact::from_bytes(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(artifact.background.len(), 12);
    assert!(artifact.created_at.is_some());
    let report: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(report["confusion"]["counts"].as_array().unwrap().len(), 22);
}

#[test]
fn grid_search_prints_the_best_parameters() {
    let text = stdout(&cropwise(&["train", "--kind", "dt", "--grid", "--data", fixture_csv().to_str().unwrap()]));
    assert!(text.contains("grid search: 360 candidates"));
    assert!(text.contains("parameters: {\"kind\":\"dt\""));
}

#[test]
fn missing_data_exits_with_two_and_names_the_path() {
    let out = cropwise(&["train", "--kind", "rf", "--data", "/no/such/crop.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/crop.csv"));

    let out = cropwise(&["predict", "--model", "/no/such/model.json", "--sample", PAPAYA_TEXT]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_params_are_reported() {
    let out = cropwise(&[
        "train",
        "--kind",
        "rf",
        "--data",
        fixture_csv().to_str().unwrap(),
        "--params",
        r#"{"depth": 3}"#,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`depth` is not a rf parameter"));
}

#[test]
fn shapley_explanation_sums_to_the_predicted_probability() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "rf");
    let prediction: Value = serde_json::from_str(&stdout(&cropwise(&[
        "predict", "--model", &model, "--sample", PAPAYA_TEXT, "--format", "json",
    ])))
    .unwrap();
    assert_eq!(prediction["predicted"], "papaya");
    let p = prediction["probabilities"][prediction["predicted_index"].as_u64().unwrap() as usize]["probability"]
        .as_f64()
        .unwrap();

    let explained: Value = serde_json::from_str(&stdout(&cropwise(&[
        "explain", "--model", &model, "--method", "shap-exact", "--sample", PAPAYA_TEXT, "--format", "json",
    ])))
    .unwrap();
    let a = &explained["attribution"];
    let sum: f64 = a["contributions"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((a["baseline"].as_f64().unwrap() + sum - p).abs() < 1e-9);

    let text = stdout(&cropwise(&["explain", "--model", &model, "--method", "shap-exact", "--sample", PAPAYA_TEXT]));
    assert!(text.contains("target papaya") && text.contains("rainfall"));
}

#[test]
fn counterfactual_explanations_render_a_delta_table() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "rf");
    let text = stdout(&cropwise(&[
        "explain", "--model", &model, "--method", "counterfactual", "--target", "rice", "--sample", PAPAYA_TEXT,
        "--population", "80", "--generations", "60",
    ]));
    assert!(text.starts_with("query predicted as papaya; target rice"));
    assert!(text.contains("counterfactual 1") || text.contains("not found"));

    let out = cropwise(&[
        "explain", "--model", &model, "--method", "counterfactual", "--sample", PAPAYA_TEXT,
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--target"));
}

#[test]
fn explain_accepts_a_csv_row_and_lime() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "lgbm");
    let data = fixture_csv();
    let text = stdout(&cropwise(&[
        "explain", "--model", &model, "--method", "lime", "--data", data.to_str().unwrap(), "--row", "3",
        "--perturbations", "500",
    ]));
    assert!(text.contains("rules:") && text.contains("fidelity"));
    let text = stdout(&cropwise(&["explain", "--model", &model, "--method", "path", "--sample", PAPAYA_TEXT]));
    assert!(text.contains("margin space"));
}

#[test]
fn unsupported_pairing_is_explained() {
    let dir = tempfile::tempdir().unwrap();
    let model = train(dir.path(), "knn");
    let out = cropwise(&["explain", "--model", &model, "--method", "gain"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gain is not supported for knn models"));
}

#[test]
fn evaluate_scores_a_labeled_csv() {
    let data = fixture_csv();
    let text = stdout(&cropwise(&["evaluate", "--model", GOLDEN, "--data", data.to_str().unwrap()]));
    assert!(text.starts_with("model: dt (40 rows)"));
    let held_out: Value = serde_json::from_str(&stdout(&cropwise(&[
        "evaluate", "--model", GOLDEN, "--data", data.to_str().unwrap(), "--test-fraction", "0.3", "--format", "json",
    ])))
    .unwrap();
    let total: u64 = held_out["confusion"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()))
        .sum();
    assert_eq!(total, 12);
}

#[test]
fn golden_artifact_still_loads_and_predicts() {
    let bytes = std::fs::read(GOLDEN).unwrap();
    let artifact = ModelArtifact::from_bytes(&bytes).unwrap();
    assert_eq!(artifact.to_bytes(), bytes);
    assert_eq!(artifact.format_version, 1);

    let out: Value = serde_json::from_str(&stdout(&cropwise(&[
        "predict", "--model", GOLDEN, "--sample", PAPAYA_TEXT, "--format", "json",
    ])))
    .unwrap();
    assert_eq!(out["predicted"], "papaya");
    assert_eq!(
        out["artifact_sha256"],
        "2b03b26767b901224a16bdcf21d6b366b8630b47e43353e3428ab2777177dd31"
    );
    let rice = stdout(&cropwise(&["predict", "--model", GOLDEN, "--sample", "80,40,40,22,82,6.5,230"]));
    assert!(rice.starts_with("recommended crop: rice"));
}

#[test]
fn serve_refuses_a_bad_artifact_before_binding() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"format_version\": 2}").unwrap();
    let out = cropwise(&["serve", "--model", bad.to_str().unwrap(), "--addr", "127.0.0.1:0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unsupported format version 2"));
}
