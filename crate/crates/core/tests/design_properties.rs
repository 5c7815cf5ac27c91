use kocal::design::{
    fill_distance, fill_distance_with, quasi_uniformity_report, separation_distance, sobol_design,
    Design, Domain,
};
use proptest::prelude::*;

#[test]
fn dyadic_van_der_corput_scaled_fill_is_bounded() {
    let unit = Domain::interval(0.0, 1.0).unwrap();
    for k in 1..=10 {
        let n = 1usize << k;
        let r = quasi_uniformity_report(&sobol_design(n, &unit).unwrap()).unwrap();
        assert!(r.ratio <= 2.0, "k = {k}: ratio {}", r.ratio);
        assert!(r.scaled_fill <= 1.0, "k = {k}: h·n = {}", r.scaled_fill);
    }
}

#[test]
fn benchmark_sized_design_is_quasi_uniform() {
    let r =
        quasi_uniformity_report(&sobol_design(600, &Domain::interval(-1.0, 1.0).unwrap()).unwrap())
            .unwrap();
    assert!(r.separation >= 2.0 / (2.0 * 600.0));
    assert!(r.ratio <= 4.0, "ratio {}", r.ratio);
}

#[test]
fn metrics_are_monotone_along_the_sequence() {
    let domain = Domain::interval(-1.0, 1.0).unwrap();
    let full = sobol_design(300, &domain).unwrap();
    let mut prev_h = f64::INFINITY;
    let mut prev_q = f64::INFINITY;
    for n in 2..=300 {
        let d = full.prefix(n).unwrap();
        let h = fill_distance(&d).value;
        let q = separation_distance(&d).unwrap();
        assert!(h <= prev_h && q <= prev_q, "n = {n}");
        prev_h = h;
        prev_q = q;
    }
}

#[test]
fn two_dimensional_fill_distance_reports_a_bound() {
    let domain = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
    let corner = Design::new(vec![vec![0.0, 0.0]], domain).unwrap();
    let h = fill_distance_with(&corner, 10_000);
    let exact = 2f64.sqrt();
    assert!((h.value - exact).abs() <= h.error_bound + 1e-12);
    assert!(h.error_bound > 0.0);
}

#[test]
fn design_outside_domain_is_rejected() {
    assert!(Design::from_scalars(&[0.0, 1.5], Domain::interval(-1.0, 1.0).unwrap()).is_err());
    assert!(separation_distance(
        &Design::from_scalars(&[0.0], Domain::interval(-1.0, 1.0).unwrap()).unwrap()
    )
    .is_err());
}

proptest! {
    #[test]
    fn ratio_is_positive_for_distinct_points(raw in proptest::collection::btree_set(0u32..10_000, 2..40)) {
        let xs: Vec<f64> = raw.iter().map(|&i| i as f64 / 10_000.0).collect();
        let d = Design::from_scalars(&xs, Domain::interval(0.0, 1.0).unwrap()).unwrap();
        let r = quasi_uniformity_report(&d).unwrap();
        prop_assert!(r.ratio > 0.0 && r.ratio.is_finite());
    }

    #[test]
    fn csv_round_trip_is_exact(raw in proptest::collection::vec(-1.0f64..1.0, 1..30)) {
        let domain = Domain::interval(-1.0, 1.0).unwrap();
        let d = Design::from_scalars(&raw, domain.clone()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("design.csv");
        d.write_csv(&path).unwrap();
        prop_assert_eq!(Design::read_csv(&path, domain).unwrap(), d);
    }
}
