use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use kocal::experiment::generate_physical_data;
use kocal::krr::{krr_fit, krr_predict, KrrFit};
use serde_json::Value;

fn kocal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kocal"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = kocal(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
}

#[test]
fn design_of_three_points() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "design",
        "--n",
        "3",
        "--domain",
        "-1,1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let mut r = csv::Reader::from_path(dir.path().join("design.csv")).unwrap();
    let xs: Vec<f64> = r
        .records()
        .map(|rec| rec.unwrap()[0].parse().unwrap())
        .collect();
    assert_eq!(xs, [0.0, -0.5, 0.5]);
    let m = json(&dir.path().join("metrics.json"));
    assert_eq!(m["fill"].as_f64(), Some(0.5));
    assert_eq!(m["separation"].as_f64(), Some(0.5));
    assert_eq!(m["ratio"].as_f64(), Some(1.0));
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["command"], "design");
    assert_eq!(manifest["config"]["n"], 3);
}

#[test]
fn malformed_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"n": 4, "not_a_key": true}"#).unwrap();
    let out_dir = dir.path().join("out");
    let out = kocal(&[
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["exit_code"], 2);
    assert!(!out_dir.exists());

    fs::write(&cfg, "{ not json").unwrap();
    let out = kocal(&[
        "design",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out_dir.exists());
}

#[test]
fn missing_input_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = kocal(&[
        "krr-fit",
        "--set",
        "data=\"/nonexistent/data.csv\"",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(listing(dir.path()).is_empty());
}

#[test]
fn fit_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_physical_data(30, 0.1, 3, 0).unwrap();
    let data_path = dir.path().join("data.csv");
    data.write_csv(&data_path).unwrap();
    let fit_dir = dir.path().join("fit");
    ok(&[
        "krr-fit",
        "--set",
        &format!("data=\"{}\"", data_path.display()),
        "--set",
        "lambda=0.01",
        "--out",
        fit_dir.to_str().unwrap(),
    ]);
    assert_eq!(
        listing(&fit_dir),
        ["fit.csv", "fit_summary.json", "manifest.json"]
    );
    let summary = json(&fit_dir.join("fit_summary.json"));
    assert_eq!(summary["lambda"].as_f64(), Some(0.01));

    let reference = krr_fit(&kocal::benchmark::kernel(), &data, 0.01).unwrap();
    let saved = KrrFit::read_csv(fit_dir.join("fit.csv")).unwrap();
    assert_eq!(saved.coeffs(), reference.coeffs());

    let points = dir.path().join("points.csv");
    fs::write(&points, "x_1\n-0.75\n0.1\n0.9\n").unwrap();
    let pred_dir = dir.path().join("pred");
    ok(&[
        "krr-predict",
        "--set",
        &format!("fit=\"{}\"", fit_dir.join("fit.csv").display()),
        "--set",
        &format!("points=\"{}\"", points.display()),
        "--out",
        pred_dir.to_str().unwrap(),
    ]);
    let mut r = csv::Reader::from_path(pred_dir.join("predictions.csv")).unwrap();
    for rec in r.records() {
        let rec = rec.unwrap();
        let x: f64 = rec[0].parse().unwrap();
        let p: f64 = rec[1].parse().unwrap();
        assert_eq!(p, krr_predict(&reference, &[x]));
    }
}

#[test]
fn calibrate_benchmark_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_physical_data(100, 0.0, 0, 0).unwrap();
    let data_path = dir.path().join("data.csv");
    data.write_csv(&data_path).unwrap();
    ok(&[
        "calibrate",
        "--set",
        &format!("data=\"{}\"", data_path.display()),
        "--set",
        "reading=xi-minus-weighted-quadratic",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let est = json(&dir.path().join("estimate.json"));
    let theta = est["theta_hat"][0].as_f64().unwrap();
    assert!(theta > 0.5 && theta < 1.1, "{theta}");
    let total = est["decomposition"]["train_term"].as_f64().unwrap()
        + est["decomposition"]["norm_term"].as_f64().unwrap();
    let value = est["objective_value"].as_f64().unwrap();
    assert!((total - value).abs() <= 1e-8 * value);
}

#[test]
fn study_then_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "study-sec4",
            "--seed",
            "3",
            "--set",
            "sizes=[20,40,60]",
            "--set",
            "replicates=4",
            "--out",
            out.to_str().unwrap(),
        ]);
        out
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(
        listing(&a),
        ["manifest.json", "plot.svg", "report.json", "results.csv"]
    );
    for f in ["results.csv", "report.json", "plot.svg", "manifest.json"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let report = json(&a.join("report.json"));
    assert!(report["fit"]["b_hat"].is_f64());
    assert_eq!(json(&a.join("manifest.json"))["config"]["seed"], 3);
    assert_eq!(
        fs::read_to_string(a.join("results.csv"))
            .unwrap()
            .lines()
            .count(),
        3 * 4 + 1
    );

    let rep = dir.path().join("rep");
    ok(&[
        "report",
        "--set",
        &format!("results=\"{}\"", a.join("results.csv").display()),
        "--out",
        rep.to_str().unwrap(),
    ]);
    let summary = json(&rep.join("summary.json"));
    assert_eq!(summary["fit"]["b_hat"], report["fit"]["b_hat"]);
    assert_eq!(summary["replicates"], serde_json::json!([4, 4, 4]));
}

#[test]
fn krr_study_and_kernel_eval() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "study-krr",
        "--set",
        "sizes=[16,32]",
        "--set",
        "replicates=2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["study"], "krr");
    assert_eq!(report["theory_slope"].as_f64(), Some(-0.4));

    let k = dir.path().join("k");
    ok(&[
        "kernel-eval",
        "--set",
        "lags=[[0.0],[1.0]]",
        "--out",
        k.to_str().unwrap(),
    ]);
    let mut r = csv::Reader::from_path(k.join("kernel_eval.csv")).unwrap();
    let vals: Vec<f64> = r
        .records()
        .map(|rec| rec.unwrap()[1].parse().unwrap())
        .collect();
    assert_eq!(vals[0], 1.0);
    assert!((vals[1] - (-1.0f64).exp()).abs() < 1e-15);
}

#[test]
fn help_lists_config_defaults() {
    let out = kocal(&["study-sec4", "--help"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in [
        "sizes",
        "replicates",
        "noise_sd",
        "lambda_schedule",
        "seed",
        "reading",
    ] {
        assert!(text.contains(key), "missing {key} in help");
    }
}
