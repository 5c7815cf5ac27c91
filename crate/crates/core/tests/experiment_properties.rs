use std::sync::Arc;

use kocal::benchmark::{self, Reading, TARGET_THETA_PRIME};
use kocal::experiment::{
    emit_report, generate_physical_data, read_results_csv, run_convergence_study_with,
    run_krr_rate_study, summarize_records, CalibrationSummary, KrrStudySettings, LambdaRule,
    RateReport, StudyConfig,
};
use kocal::quadrature::GaussLegendre;
use kocal::rkhs::IntegralClassFunction;

const THETA_PRIME: f64 = 0.7811404499131985;

fn summary() -> CalibrationSummary {
    CalibrationSummary {
        reading: Reading::XiMinusWeightedQuadratic,
        theta_prime: THETA_PRIME,
        target_theta_prime: TARGET_THETA_PRIME,
        deviation_from_target: (THETA_PRIME - TARGET_THETA_PRIME).abs(),
        readings: Vec::new(),
    }
}

fn study(sizes: Vec<usize>, replicates: usize, seed: u64) -> RateReport {
    let cfg = StudyConfig {
        sizes,
        replicates,
        seed,
        reading: Reading::XiMinusWeightedQuadratic.id().into(),
        ..StudyConfig::default()
    };
    run_convergence_study_with(&cfg, summary()).unwrap()
}

#[test]
fn xi_at_zero() {
    let want = 1.0 - (-2.0f64).exp();
    assert!((benchmark::xi(0.0) - want).abs() < 1e-15);
    // ξ(x) = ∫_{-1}^{1} e^{-|x-t|} e^{-|t|} dt
    let gl = GaussLegendre::new(40);
    let quad = gl.integrate(-1.0, 0.0, |t| (-(0.0 - t).abs() - t.abs()).exp())
        + gl.integrate(0.0, 1.0, |t| (-(0.0 - t).abs() - t.abs()).exp());
    assert!((quad - want).abs() < 1e-13);
}

#[test]
fn noise_free_data_is_the_true_process() {
    let d = generate_physical_data(50, 0.0, 9, 3).unwrap();
    for (x, y) in d.design().points().iter().zip(d.y()) {
        assert_eq!(*y, benchmark::xi(x[0]));
    }
    let a = generate_physical_data(50, 0.1, 9, 3).unwrap();
    let b = generate_physical_data(50, 0.1, 9, 3).unwrap();
    assert_eq!(a.y(), b.y());
    assert_ne!(a.y(), generate_physical_data(50, 0.1, 9, 4).unwrap().y());
}

#[test]
fn study_is_deterministic_and_prefix_stable() {
    let a = study(vec![20, 40, 80], 8, 5);
    let b = study(vec![20, 40, 80], 8, 5);
    assert_eq!(a.records, b.records);
    let short = study(vec![20, 40, 80], 4, 5);
    let prefix: Vec<_> = a
        .records
        .iter()
        .filter(|r| r.replicate < 4)
        .cloned()
        .collect();
    assert_eq!(short.records, prefix);
}

#[test]
fn slope_is_stable_and_error_falls_at_default_sizes() {
    let sizes = StudyConfig::default().sizes;
    let base = study(sizes.clone(), 100, 2019);
    let doubled = study(sizes, 200, 2019);
    for r in [&base, &doubled] {
        assert!(r.mean_errors.last().unwrap() < r.mean_errors.first().unwrap());
    }
    let delta = (base.fit.b_hat - doubled.fit.b_hat).abs();
    assert!(delta <= 0.02, "{} vs {}", base.fit.b_hat, doubled.fit.b_hat);
}

#[test]
fn report_files_are_written_together() {
    let report = study(vec![20, 40], 3, 1);
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["plot.svg", "report.json", "results.csv"]);

    let text = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(text.lines().count(), 2 * 3 + 1);
    let records = read_results_csv(dir.path().join("results.csv")).unwrap();
    assert_eq!(records, report.records);
    let s = summarize_records(&records).unwrap();
    assert_eq!(s.mean_errors, report.mean_errors);
    assert_eq!(s.fit, report.fit);

    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["fit"]["b_hat"].as_f64(), Some(report.fit.b_hat));
    assert_eq!(
        json["calibration"]["theta_prime"].as_f64(),
        Some(THETA_PRIME)
    );
    assert_eq!(json["rng"]["seed"].as_u64(), Some(1));
}

#[test]
fn empty_report_writes_nothing() {
    let mut report = study(vec![20, 40], 1, 1);
    report.records.clear();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert!(emit_report(&report, &out).is_err());
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().count() == 0);
}

#[test]
fn interpolating_fits_improve_with_n() {
    let kernel = benchmark::kernel();
    let f = IntegralClassFunction::new(
        kernel,
        Arc::new(|t: &[f64]| (-t[0].abs()).exp()),
        benchmark::domain(),
    )
    .unwrap()
    .with_kinks(vec![0.0]);
    let settings = KrrStudySettings {
        sizes: vec![8, 16, 32, 64, 128],
        replicates: 1,
        noise_sd: 0.0,
        lambda: LambdaRule::Fixed(1e-12),
        seed: 0,
    };
    let report = run_krr_rate_study(&kernel, &f, &settings).unwrap();
    assert!(
        report.mean_errors.windows(2).all(|w| w[1] < w[0]),
        "{:?}",
        report.mean_errors
    );
    assert_eq!(report.theory_slope, None);
}
