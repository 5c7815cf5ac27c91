//! Monte Carlo convergence studies and their reports.
//!
//! Every replicate draws its noise from its own ChaCha20 stream keyed by
//! `(seed, n, r)`, so results do not depend on scheduling, and dropping
//! replicates or sizes leaves the remaining results untouched.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::{
    self, adopt_reading, reading_oracle, reading_table, BenchmarkSimulator, Reading, ReadingChoice,
    ReadingRow, TARGET_THETA_PRIME,
};
use crate::calibration::{estimate_theta_with, EstimateOptions, OracleOptions, PreparedDesign};
use crate::design::{fmt_f64, sobol_design, Design, Domain};
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel_matrix, MaternKernel};
use crate::krr::{ridge_factor, Dataset, LambdaSchedule, ScheduleKind};
use crate::output::FileGroup;
use crate::quadrature::{composite_rule, GaussLegendre};
use crate::rkhs::IntegralClassFunction;

/// Generator used for every replicate stream.
pub fn replicate_rng(seed: u64, n: usize, replicate: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | replicate as u64);
    rng
}

fn normal_draws(rng: &mut ChaCha20Rng, count: usize, sd: f64) -> Vec<f64> {
    (0..count)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            sd * z
        })
        .collect()
}

/// Benchmark data: Sobol design of size `n` on `[-1, 1]` and
/// `y_i = ξ(x_i) + e_i` with `e_i ~ N(0, noise_sd²)` drawn from the stream of
/// `(seed, n, replicate)`.
pub fn generate_physical_data(
    n: usize,
    noise_sd: f64,
    seed: u64,
    replicate: usize,
) -> Result<Dataset> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise_sd must be >= 0, got {noise_sd}"
        )));
    }
    let design = sobol_design(n, &benchmark::domain())?;
    let noise = normal_draws(&mut replicate_rng(seed, n, replicate), n, noise_sd);
    let y = design
        .points()
        .iter()
        .zip(noise)
        .map(|(p, e)| benchmark::xi(p[0]) + e)
        .collect();
    Dataset::new(design, y)
}

fn default_sizes() -> Vec<usize> {
    (1..=30).map(|j| 20 * j).collect()
}

/// Configuration of the calibration convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Sample sizes, strictly increasing.
    pub sizes: Vec<usize>,
    pub replicates: usize,
    /// Standard deviation τ of the observation noise.
    pub noise_sd: f64,
    pub lambda_schedule: LambdaSchedule,
    pub seed: u64,
    /// `auto` or one of the reading identifiers.
    pub reading: String,
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub estimator: EstimateOptions,
    pub oracle: OracleOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sizes: default_sizes(),
            replicates: 100,
            noise_sd: 0.1,
            lambda_schedule: LambdaSchedule::new(ScheduleKind::Improved),
            seed: 2019,
            reading: "auto".into(),
            theta_lower: -5.0,
            theta_upper: 5.0,
            estimator: EstimateOptions::default(),
            oracle: OracleOptions::default(),
        }
    }
}

fn validate_sizes(sizes: &[usize], replicates: usize) -> Result<()> {
    if sizes.is_empty() {
        return Err(Error::Config("sizes must not be empty".into()));
    }
    if sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "sizes must be positive and strictly increasing".into(),
        ));
    }
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    Ok(())
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        validate_sizes(&self.sizes, self.replicates)?;
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!(
                "noise_sd must be >= 0, got {}",
                self.noise_sd
            )));
        }
        self.reading_choice()?;
        self.theta_box()?;
        self.estimator.validate()?;
        self.oracle.quadrature.validate()?;
        Ok(())
    }

    pub fn reading_choice(&self) -> Result<ReadingChoice> {
        self.reading.parse()
    }

    pub fn theta_box(&self) -> Result<Domain> {
        Domain::interval(self.theta_lower, self.theta_upper)
            .map_err(|e| Error::Config(format!("theta box: {e}")))
    }
}

/// One replicate of one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub lambda: f64,
    /// θ̂ for calibration studies; absent for KRR studies.
    pub estimate: Option<f64>,
    pub error: f64,
}

/// Ordinary least squares fit of `log E = a + b log n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub a_hat: f64,
    pub b_hat: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
}

pub fn loglog_fit(ns: &[usize], errors: &[f64]) -> Result<LogLogFit> {
    if ns.len() != errors.len() {
        return Err(Error::DimensionMismatch {
            expected: ns.len(),
            got: errors.len(),
        });
    }
    if ns.len() < 2 {
        return Err(Error::InvalidArgument(
            "log-log fit needs at least two sizes".into(),
        ));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "errors must be positive, got {e}"
        )));
    }
    if ns.contains(&0) {
        return Err(Error::InvalidArgument("sizes must be positive".into()));
    }
    let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let y: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "log-log fit needs distinct sizes".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b_hat = sxy / sxx;
    let a_hat = my - b_hat * mx;
    let residuals: Vec<f64> = x
        .iter()
        .zip(&y)
        .map(|(a, b)| b - (a_hat + b_hat * a))
        .collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LogLogFit {
        a_hat,
        b_hat,
        r_squared,
        residuals,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngMetadata {
    pub generator: String,
    pub seed: u64,
    pub stream: String,
    pub normal: String,
}

impl RngMetadata {
    fn new(seed: u64) -> Self {
        Self {
            generator: "ChaCha20 (rand_chacha)".into(),
            seed,
            stream: "(n << 32) | replicate".into(),
            normal: "rand_distr::StandardNormal".into(),
        }
    }
}

/// Calibration-specific part of a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub reading: Reading,
    pub theta_prime: f64,
    pub target_theta_prime: f64,
    pub deviation_from_target: f64,
    pub readings: Vec<ReadingRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// `"calibration"` or `"krr"`.
    pub study: String,
    pub config: serde_json::Value,
    pub sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub mean_errors: Vec<f64>,
    pub fit: LogLogFit,
    /// Asymptotic slope predicted for the chosen schedule.
    pub theory_slope: Option<f64>,
    pub calibration: Option<CalibrationSummary>,
    pub rng: RngMetadata,
    /// Per-replicate rows; written to `results.csv` rather than the JSON.
    #[serde(skip)]
    pub records: Vec<ReplicateRecord>,
}

impl RateReport {
    pub fn theta_prime(&self) -> Option<f64> {
        self.calibration.as_ref().map(|c| c.theta_prime)
    }
}

/// Per-size means of `records`, which must be sorted by `(n, replicate)`.
fn size_means(records: &[ReplicateRecord]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let mut sizes = Vec::new();
    let mut lambdas = Vec::new();
    let mut means = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let n = records[i].n;
        let mut j = i;
        let mut sum = 0.0;
        while j < records.len() && records[j].n == n {
            sum += records[j].error;
            j += 1;
        }
        sizes.push(n);
        lambdas.push(records[i].lambda);
        means.push(sum / (j - i) as f64);
        i = j;
    }
    (sizes, lambdas, means)
}

/// Resolves the reading, computes θ′ and the comparison table.
pub fn resolve_reading(
    choice: ReadingChoice,
    oracle: &OracleOptions,
) -> Result<CalibrationSummary> {
    let readings = reading_table(oracle)?;
    let reading = match choice {
        ReadingChoice::Auto => adopt_reading(&readings)?,
        ReadingChoice::Fixed(r) => r,
    };
    let theta_prime = readings
        .iter()
        .find(|r| r.reading == reading)
        .map(|r| r.theta_prime)
        .map_or_else(
            || reading_oracle(reading, oracle).map(|t| t.theta_prime[0]),
            Ok,
        )?;
    Ok(CalibrationSummary {
        reading,
        theta_prime,
        target_theta_prime: TARGET_THETA_PRIME,
        deviation_from_target: (theta_prime - TARGET_THETA_PRIME).abs(),
        readings,
    })
}

/// Calibration study on the benchmark problem: for each size and replicate,
/// draw data, estimate θ̂ and record `|θ̂ - θ′|`.
pub fn run_convergence_study(cfg: &StudyConfig) -> Result<RateReport> {
    cfg.validate()?;
    let summary = resolve_reading(cfg.reading_choice()?, &cfg.oracle)?;
    run_convergence_study_with(cfg, summary)
}

/// As [`run_convergence_study`] with a precomputed θ′ summary.
pub fn run_convergence_study_with(
    cfg: &StudyConfig,
    summary: CalibrationSummary,
) -> Result<RateReport> {
    cfg.validate()?;
    let kernel = benchmark::kernel();
    let (m, d) = (kernel.sobolev_order(), kernel.dim());
    let theta_box = cfg.theta_box()?;
    let sim = Arc::new(BenchmarkSimulator::new(summary.reading)?);
    let theta_prime = summary.theta_prime;

    let mut records = Vec::with_capacity(cfg.sizes.len() * cfg.replicates);
    for &n in &cfg.sizes {
        let lambda = cfg.lambda_schedule.value(n, m, d)?;
        let design = sobol_design(n, &benchmark::domain())?;
        let prepared = PreparedDesign::new(design, sim.clone(), kernel, lambda, theta_box.clone())?;
        let rows = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let data = generate_physical_data(n, cfg.noise_sd, cfg.seed, r)?;
                let obj = prepared.bind(data.y())?;
                let est = estimate_theta_with(&obj, &cfg.estimator)?;
                let th = est.theta_hat[0];
                Ok(ReplicateRecord {
                    n,
                    replicate: r,
                    lambda,
                    estimate: Some(th),
                    error: (th - theta_prime).abs(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(rows);
    }
    let (sizes, lambdas, mean_errors) = size_means(&records);
    let fit = loglog_fit(&sizes, &mean_errors)?;
    Ok(RateReport {
        study: "calibration".into(),
        config: serde_json::to_value(cfg)?,
        sizes,
        lambdas,
        mean_errors,
        fit,
        theory_slope: theory_slope(cfg.lambda_schedule.kind, m, d, true),
        calibration: Some(summary),
        rng: RngMetadata::new(cfg.seed),
        records,
    })
}

/// Predicted exponent of the error in `n`.
///
/// For calibration under the improved schedule this is `-m/(4m+d)`; no
/// prediction is made for the standard schedule. For the `L₂` error of KRR
/// the improved schedule gives `-2m/(4m+d)` and the standard one `-m/(2m+d)`.
pub fn theory_slope(kind: ScheduleKind, m: f64, d: usize, calibration: bool) -> Option<f64> {
    let d = d as f64;
    match (kind, calibration) {
        (ScheduleKind::Improved, true) => Some(-m / (4.0 * m + d)),
        (ScheduleKind::Standard, true) => None,
        (ScheduleKind::Improved, false) => Some(-2.0 * m / (4.0 * m + d)),
        (ScheduleKind::Standard, false) => Some(-m / (2.0 * m + d)),
    }
}

/// How λ is chosen per sample size in a KRR study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaRule {
    Schedule(LambdaSchedule),
    Fixed(f64),
}

impl LambdaRule {
    pub fn value(&self, n: usize, m: f64, d: usize) -> Result<f64> {
        match self {
            LambdaRule::Schedule(s) => s.value(n, m, d),
            LambdaRule::Fixed(l) if *l > 0.0 && l.is_finite() => Ok(*l),
            LambdaRule::Fixed(l) => Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {l}"
            ))),
        }
    }
}

/// Nodes and weights of the `L₂(Ω)` error rule for a design, with the target
/// evaluated at the nodes. In one dimension panels split at every design
/// point so the kinks of the fit fall on panel edges.
struct L2Rule {
    nodes: Vec<Vec<f64>>,
    weights: Vec<f64>,
    target: Vec<f64>,
}

const L2_NODES: usize = 8;

fn l2_rule(f: &IntegralClassFunction, design: &Design) -> Result<L2Rule> {
    let domain = f.domain();
    let gl = GaussLegendre::new(L2_NODES);
    let (nodes, weights): (Vec<Vec<f64>>, Vec<f64>) = if domain.dim() == 1 {
        let mut bps: Vec<f64> = design.points().iter().map(|p| p[0]).collect();
        bps.extend_from_slice(f.kinks());
        composite_rule(&gl, domain.lower[0], domain.upper[0], 8, &bps)
            .into_iter()
            .map(|(x, w)| (vec![x], w))
            .unzip()
    } else {
        let panels = f.quadrature().panels.max(4);
        let axes: Vec<Vec<(f64, f64)>> = (0..domain.dim())
            .map(|k| composite_rule(&gl, domain.lower[k], domain.upper[k], panels, &[]))
            .collect();
        let mut out = vec![(Vec::new(), 1.0)];
        for axis in &axes {
            out = out
                .iter()
                .flat_map(|(p, w)| {
                    axis.iter().map(move |(x, wx)| {
                        let mut q: Vec<f64> = p.clone();
                        q.push(*x);
                        (q, w * wx)
                    })
                })
                .collect();
        }
        out.into_iter().unzip()
    };
    let target = nodes
        .par_iter()
        .map(|x| f.eval(x))
        .collect::<Result<Vec<f64>>>()?;
    Ok(L2Rule {
        nodes,
        weights,
        target,
    })
}

/// Settings of a KRR rate study besides the target function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrrStudySettings {
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub noise_sd: f64,
    pub lambda: LambdaRule,
    pub seed: u64,
}

/// KRR fits of noisy observations of `f` on Sobol designs; records the
/// `L₂(Ω)` error of every fit.
pub fn run_krr_rate_study(
    kernel: &MaternKernel,
    f: &IntegralClassFunction,
    settings: &KrrStudySettings,
) -> Result<RateReport> {
    validate_sizes(&settings.sizes, settings.replicates)?;
    if !(settings.noise_sd >= 0.0 && settings.noise_sd.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise_sd must be >= 0, got {}",
            settings.noise_sd
        )));
    }
    if f.kernel() != kernel {
        return Err(Error::KernelMismatch);
    }
    let (m, d) = (kernel.sobolev_order(), kernel.dim());
    let mut records = Vec::with_capacity(settings.sizes.len() * settings.replicates);
    for &n in &settings.sizes {
        let lambda = settings.lambda.value(n, m, d)?;
        let design = sobol_design(n, f.domain())?;
        let truth = design
            .points()
            .par_iter()
            .map(|x| f.eval(x))
            .collect::<Result<Vec<f64>>>()?;
        let (factor, _) = ridge_factor(kernel, &design, lambda)?;
        let rule = l2_rule(f, &design)?;
        let cross = cross_kernel_matrix(kernel, &rule.nodes, design.points());
        let rows = (0..settings.replicates)
            .into_par_iter()
            .map(|r| {
                let noise = normal_draws(
                    &mut replicate_rng(settings.seed, n, r),
                    n,
                    settings.noise_sd,
                );
                let y = DVector::from_iterator(n, truth.iter().zip(&noise).map(|(a, b)| a + b));
                let c = factor.solve(&y);
                let fitted = &cross * &c;
                let sq: f64 = rule
                    .weights
                    .iter()
                    .zip(&rule.target)
                    .zip(fitted.iter())
                    .map(|((w, t), g)| w * (t - g).powi(2))
                    .sum();
                let error = sq.max(0.0).sqrt();
                if !error.is_finite() {
                    return Err(Error::Numerical(format!("non-finite L2 error at n = {n}")));
                }
                Ok(ReplicateRecord {
                    n,
                    replicate: r,
                    lambda,
                    estimate: None,
                    error,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.extend(rows);
    }
    let (sizes, lambdas, mean_errors) = size_means(&records);
    let fit = loglog_fit(&sizes, &mean_errors)?;
    let theory = match settings.lambda {
        LambdaRule::Schedule(s) => theory_slope(s.kind, m, d, false),
        LambdaRule::Fixed(_) => None,
    };
    Ok(RateReport {
        study: "krr".into(),
        config: serde_json::json!({
            "kernel": kernel,
            "domain": f.domain(),
            "quadrature": f.quadrature(),
            "settings": settings,
        }),
        sizes,
        lambdas,
        mean_errors,
        fit,
        theory_slope: theory,
        calibration: None,
        rng: RngMetadata::new(settings.seed),
        records,
    })
}

pub const RESULTS_HEADER: [&str; 6] = [
    "n",
    "replicate",
    "lambda",
    "estimate",
    "error",
    "mean_error",
];

/// `results.csv` bytes: one row per replicate sorted by `(n, replicate)`.
pub fn results_csv(report: &RateReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RESULTS_HEADER)?;
    for rec in &report.records {
        let idx = report
            .sizes
            .iter()
            .position(|&n| n == rec.n)
            .ok_or_else(|| Error::InvalidArgument(format!("size {} missing from report", rec.n)))?;
        w.write_record([
            rec.n.to_string(),
            rec.replicate.to_string(),
            fmt_f64(rec.lambda),
            rec.estimate.map(fmt_f64).unwrap_or_default(),
            fmt_f64(rec.error),
            fmt_f64(report.mean_errors[idx]),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Reads the rows of a `results.csv` written by [`emit_report`].
pub fn read_results_csv<P: AsRef<Path>>(path: P) -> Result<Vec<ReplicateRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULTS_HEADER {
        return Err(Error::Config(format!(
            "unexpected results header {header:?}"
        )));
    }
    let parse_f = |s: &str| -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad number {s:?} in results")))
    };
    let parse_u = |s: &str| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad integer {s:?} in results")))
    };
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        out.push(ReplicateRecord {
            n: parse_u(&row[0])?,
            replicate: parse_u(&row[1])?,
            lambda: parse_f(&row[2])?,
            estimate: if row[3].trim().is_empty() {
                None
            } else {
                Some(parse_f(&row[3])?)
            },
            error: parse_f(&row[4])?,
        });
    }
    out.sort_by_key(|r| (r.n, r.replicate));
    Ok(out)
}

/// Summary of a results file: per-size means and the log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsSummary {
    pub sizes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub mean_errors: Vec<f64>,
    pub replicates: Vec<usize>,
    pub fit: LogLogFit,
}

pub fn summarize_records(records: &[ReplicateRecord]) -> Result<ResultsSummary> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no replicate records".into()));
    }
    let (sizes, lambdas, mean_errors) = size_means(records);
    let replicates = sizes
        .iter()
        .map(|n| records.iter().filter(|r| r.n == *n).count())
        .collect();
    let fit = loglog_fit(&sizes, &mean_errors)?;
    Ok(ResultsSummary {
        sizes,
        lambdas,
        mean_errors,
        replicates,
        fit,
    })
}

/// Log-log scatter of the per-size means with the fitted line.
pub fn plot_svg(sizes: &[usize], means: &[f64], fit: &LogLogFit, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 60.0;
    let xs: Vec<f64> = sizes.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = means.iter().map(|e| e.ln()).collect();
    let line_y = |x: f64| fit.a_hat + fit.b_hat * x;
    let (mut x0, mut x1) = bounds(&xs);
    let (mut y0, mut y1) = bounds(
        &ys.iter()
            .copied()
            .chain([line_y(x0), line_y(x1)])
            .collect::<Vec<_>>(),
    );
    pad(&mut x0, &mut x1);
    pad(&mut y0, &mut y1);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.2}</text>"#,
            px(fx),
            H - M + 18.0,
            fx
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            M - 6.0,
            py(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">log n</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">log mean error</text>"#,
        H / 2.0,
        H / 2.0
    );
    let _ = writeln!(
        s,
        r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#c0392b" stroke-width="1.5"/>"##,
        px(x0),
        py(line_y(x0)),
        px(x1),
        py(line_y(x1))
    );
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(
            s,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#2c3e50"/>"##,
            px(*x),
            py(*y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">slope {:.5}, intercept {:.5}, R² {:.4}</text>"#,
        W - M - 6.0,
        M + 18.0,
        fit.b_hat,
        fit.a_hat,
        fit.r_squared
    );
    s.push_str("</svg>\n");
    s
}

fn bounds(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(*x), hi.max(*x))
        })
}

fn pad(lo: &mut f64, hi: &mut f64) {
    let span = (*hi - *lo).max(1e-9);
    *lo -= 0.05 * span;
    *hi += 0.05 * span;
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Writes `results.csv`, `report.json` and `plot.svg` into `out_dir`, all or
/// none of them.
pub fn emit_report<P: AsRef<Path>>(report: &RateReport, out_dir: P) -> Result<()> {
    let mut group = FileGroup::new(out_dir);
    stage_report(report, &mut group)?;
    group.commit()?;
    Ok(())
}

/// Adds the three report files to `group` without committing it.
pub fn stage_report(report: &RateReport, group: &mut FileGroup) -> Result<()> {
    if report.records.is_empty() {
        return Err(Error::InvalidArgument(
            "report has no replicate records".into(),
        ));
    }
    let csv = results_csv(report)?;
    let title = match &report.calibration {
        Some(c) => format!(
            "|θ̂ - θ′| against n (θ′ = {:.6}, reading {})",
            c.theta_prime, c.reading
        ),
        None => "L2 error of the KRR fit against n".to_string(),
    };
    let svg = plot_svg(&report.sizes, &report.mean_errors, &report.fit, &title);
    group.write("results.csv", &csv)?;
    group.write_json("report.json", report)?;
    group.write("plot.svg", svg.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_power_law_fit() {
        let ns: Vec<usize> = (1..=30).map(|j| 20 * j).collect();
        let es: Vec<f64> = ns.iter().map(|&n| 3.7 * (n as f64).powf(-0.2)).collect();
        let f = loglog_fit(&ns, &es).unwrap();
        assert_abs_diff_eq!(f.b_hat, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(f.a_hat, 3.7f64.ln(), epsilon = 1e-11);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert_abs_diff_eq!(f.r_squared, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_point_fit_is_exact() {
        let f = loglog_fit(&[10, 1000], &[0.5, 0.05]).unwrap();
        assert_abs_diff_eq!(f.b_hat, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(f.a_hat + f.b_hat * 10f64.ln(), 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(loglog_fit(&[10], &[0.1]).is_err());
        assert!(loglog_fit(&[10, 20], &[0.1, 0.0]).is_err());
        assert!(loglog_fit(&[10, 20], &[0.1, -1.0]).is_err());
        assert!(loglog_fit(&[10, 10], &[0.1, 0.2]).is_err());
    }

    #[test]
    fn noise_free_data_is_xi() {
        let d = generate_physical_data(7, 0.0, 3, 0).unwrap();
        for (p, y) in d.design().points().iter().zip(d.y()) {
            assert_eq!(*y, benchmark::xi(p[0]));
        }
    }

    #[test]
    fn data_is_deterministic_and_streams_differ() {
        let a = generate_physical_data(40, 0.1, 11, 3).unwrap();
        let b = generate_physical_data(40, 0.1, 11, 3).unwrap();
        let c = generate_physical_data(40, 0.1, 11, 4).unwrap();
        let e = generate_physical_data(40, 0.1, 12, 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.y(), c.y());
        assert_ne!(a.y(), e.y());
    }

    #[test]
    fn study_config_validation() {
        let mut c = StudyConfig::default();
        assert!(c.validate().is_ok());
        c.sizes = vec![20, 20];
        assert!(c.validate().is_err());
        c = StudyConfig::default();
        c.replicates = 0;
        assert!(c.validate().is_err());
        c = StudyConfig::default();
        c.reading = "bogus".into();
        assert!(c.validate().is_err());
        assert!(serde_json::from_str::<StudyConfig>(r#"{"sizez": [1]}"#).is_err());
    }

    #[test]
    fn empty_report_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let report = RateReport {
            study: "krr".into(),
            config: serde_json::Value::Null,
            sizes: vec![],
            lambdas: vec![],
            mean_errors: vec![],
            fit: LogLogFit {
                a_hat: 0.0,
                b_hat: 0.0,
                r_squared: 1.0,
                residuals: vec![],
            },
            theory_slope: None,
            calibration: None,
            rng: RngMetadata::new(0),
            records: vec![],
        };
        let out = dir.path().join("out");
        assert!(emit_report(&report, &out).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn theory_slopes() {
        assert_eq!(
            theory_slope(ScheduleKind::Improved, 1.0, 1, true),
            Some(-0.2)
        );
        assert_eq!(
            theory_slope(ScheduleKind::Improved, 1.0, 1, false),
            Some(-0.4)
        );
        assert_eq!(
            theory_slope(ScheduleKind::Standard, 1.0, 1, false),
            Some(-1.0 / 3.0)
        );
        assert_eq!(theory_slope(ScheduleKind::Standard, 1.0, 1, true), None);
    }
}
