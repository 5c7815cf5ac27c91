//! Command-line front end.
//!
//! Every subcommand reads a JSON config whose keys all have defaults. The
//! effective config is the defaults, overlaid by `--config FILE`, overlaid by
//! each `--set key=value` (dotted keys reach nested blocks). Unknown keys are
//! rejected. Outputs are written to `--out` together with `manifest.json`,
//! which echoes the resolved config; nothing is renamed into place unless the
//! whole command succeeds.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::benchmark::{self, adopt_reading, reading_table, ReadingChoice};
use crate::calibration::{estimate_theta_with, EstimateOptions, OracleOptions, PreparedDesign};
use crate::design::{
    fmt_f64, quasi_uniformity_report_with, sobol_design, Domain, DEFAULT_FILL_LATTICE,
};
use crate::error::{Error, Result};
use crate::experiment::{
    plot_svg, read_results_csv, run_convergence_study, run_krr_rate_study, stage_report,
    summarize_records, KrrStudySettings, LambdaRule, StudyConfig,
};
use crate::kernel::MaternKernel;
use crate::krr::{fit_rkhs_norm_sq, krr_fit, Dataset, KrrFit, LambdaSchedule, ScheduleKind};
use crate::output::FileGroup;
use crate::quadrature::QuadratureConfig;
use crate::rkhs::{Density, IntegralClassFunction};

#[derive(Parser, Debug)]
#[command(
    name = "kocal",
    version,
    about = "Kernel ridge regression and frequentist Kennedy-O'Hagan calibration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file; keys not given keep their defaults
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Overrides the `seed` key
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Caps the number of worker threads
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Overrides one config key, e.g. `--set noise_sd=0.2` or `--set kernel.nu=1.5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Evaluate a Matérn kernel at lags; writes kernel_eval.csv
    KernelEval(Common),
    /// Sobol design and its fill/separation metrics; writes design.csv and metrics.json
    Design {
        #[command(flatten)]
        common: Common,
        /// Number of points (same as `--set n=..`)
        #[arg(long)]
        n: Option<usize>,
        /// Box as `lo,hi` per axis, axes separated by `;`, e.g. `-1,1` or `0,1;0,2`
        #[arg(long, allow_hyphen_values = true)]
        domain: Option<String>,
    },
    /// Fit KRR to a dataset CSV; writes fit.csv and fit_summary.json
    KrrFit(Common),
    /// Evaluate a saved fit at points from a CSV; writes predictions.csv
    KrrPredict(Common),
    /// Estimate θ for a dataset and a registered simulator; writes estimate.json
    Calibrate(Common),
    /// Calibration convergence study; writes results.csv, report.json and plot.svg
    StudySec4(Common),
    /// KRR L2 rate study; writes results.csv, report.json and plot.svg
    StudyKrr(Common),
    /// Summarize an existing results.csv; writes summary.json and plot.svg
    Report(Common),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelEvalConfig {
    pub kernel: MaternKernel,
    /// Lag vectors, each of the kernel's dimension.
    pub lags: Vec<Vec<f64>>,
    /// Force the Bessel-function route even for half-integer ν.
    pub general_bessel: bool,
}

impl Default for KernelEvalConfig {
    fn default() -> Self {
        Self {
            kernel: MaternKernel::exponential(),
            lags: vec![vec![0.0], vec![0.5], vec![1.0], vec![2.0]],
            general_bessel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    pub n: usize,
    pub domain: Domain,
    /// Lattice size for the fill distance in two or more dimensions.
    pub fill_lattice: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            n: 16,
            domain: benchmark::domain(),
            fill_lattice: DEFAULT_FILL_LATTICE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrrFitConfig {
    pub kernel: MaternKernel,
    pub domain: Domain,
    /// Dataset CSV with columns x_1..x_d, y.
    pub data: Option<PathBuf>,
    /// Fixed λ; when absent `lambda_schedule` is used.
    pub lambda: Option<f64>,
    pub lambda_schedule: LambdaSchedule,
}

impl Default for KrrFitConfig {
    fn default() -> Self {
        Self {
            kernel: MaternKernel::exponential(),
            domain: benchmark::domain(),
            data: None,
            lambda: None,
            lambda_schedule: LambdaSchedule::new(ScheduleKind::Improved),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrrPredictConfig {
    /// Fit CSV written by `krr-fit`.
    pub fit: Option<PathBuf>,
    /// CSV of points with columns x_1..x_d.
    pub points: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    pub kernel: MaternKernel,
    pub domain: Domain,
    /// Physical dataset CSV with columns x_1..x_d, y.
    pub data: Option<PathBuf>,
    pub lambda: Option<f64>,
    pub lambda_schedule: LambdaSchedule,
    pub simulator: String,
    /// `auto` or a reading identifier of the benchmark simulator.
    pub reading: String,
    pub theta_lower: f64,
    pub theta_upper: f64,
    pub estimator: EstimateOptions,
    pub oracle: OracleOptions,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self {
            kernel: MaternKernel::exponential(),
            domain: benchmark::domain(),
            data: None,
            lambda: None,
            lambda_schedule: LambdaSchedule::new(ScheduleKind::Improved),
            simulator: benchmark::SIMULATOR_ID.into(),
            reading: "auto".into(),
            theta_lower: -5.0,
            theta_upper: 5.0,
            estimator: EstimateOptions::default(),
            oracle: OracleOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KrrStudyConfig {
    pub kernel: MaternKernel,
    pub domain: Domain,
    /// Density of the integral-class target: `laplace` (e^{-|t|}),
    /// `quadratic` (1 + t²) or `cosine` (cos 3t), taken as a product over axes.
    pub target: String,
    pub quadrature: QuadratureConfig,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub noise_sd: f64,
    pub lambda_schedule: LambdaSchedule,
    /// Fixed λ overriding the schedule.
    pub lambda: Option<f64>,
    pub seed: u64,
}

impl Default for KrrStudyConfig {
    fn default() -> Self {
        Self {
            kernel: MaternKernel::exponential(),
            domain: benchmark::domain(),
            target: "laplace".into(),
            quadrature: QuadratureConfig::default(),
            sizes: vec![32, 64, 128, 256, 512],
            replicates: 50,
            noise_sd: 2.0,
            lambda_schedule: LambdaSchedule::new(ScheduleKind::Improved),
            lambda: None,
            seed: 2019,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// results.csv written by a study.
    pub results: Option<PathBuf>,
}

/// Integral-class target for KRR studies by name.
pub fn target_density(name: &str) -> Result<(Density, Vec<f64>)> {
    let product = |g: fn(f64) -> f64| -> Density {
        Arc::new(move |t: &[f64]| t.iter().map(|x| g(*x)).product())
    };
    match name {
        "laplace" => Ok((product(|x| (-x.abs()).exp()), vec![0.0])),
        "quadratic" => Ok((product(|x| 1.0 + x * x), vec![])),
        "cosine" => Ok((product(|x| (3.0 * x).cos()), vec![])),
        other => Err(Error::Config(format!(
            "unknown target {other:?}; expected laplace, quadratic or cosine"
        ))),
    }
}

/// Recursively overlays `patch` onto `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        if cur.is_null() {
            *cur = Value::Object(Map::new());
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override {key:?}: {part:?} is not a block")))?;
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    if cur.is_null() {
        *cur = Value::Object(Map::new());
    }
    let obj = cur
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("override {key:?} does not name a key")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_override(s: &str) -> Result<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
    // bare words such as `auto` are taken as strings
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Defaults, then the config file, then `extra` and `--set` overrides.
pub fn resolve_config<T>(common: &Common, extra: Vec<(String, Value)>) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut value = serde_json::to_value(T::default())?;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)?;
        let file: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !file.is_object() {
            return Err(Error::Config(format!(
                "{}: config must be a JSON object",
                path.display()
            )));
        }
        merge(&mut value, file);
    }
    for (k, v) in extra {
        set_path(&mut value, &k, v)?;
    }
    for s in &common.overrides {
        let (k, v) = parse_override(s)?;
        set_path(&mut value, &k, v)?;
    }
    if let Some(seed) = common.seed {
        if value.get("seed").is_none() {
            return Err(Error::Config(
                "--seed does not apply to this subcommand".into(),
            ));
        }
        set_path(&mut value, "seed", Value::from(seed))?;
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

fn parse_domain(s: &str) -> Result<Domain> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for axis in s.split(';') {
        let parts: Vec<&str> = axis.split(',').map(str::trim).collect();
        let bad = || Error::Config(format!("bad domain {s:?}; expected lo,hi[;lo,hi...]"));
        if parts.len() != 2 {
            return Err(bad());
        }
        lower.push(parts[0].parse::<f64>().map_err(|_| bad())?);
        upper.push(parts[1].parse::<f64>().map_err(|_| bad())?);
    }
    Domain::new(lower, upper).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a T,
}

fn manifest<T: Serialize>(group: &mut FileGroup, command: &str, config: &T) -> Result<()> {
    group.write_json(
        "manifest.json",
        &Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
        },
    )
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("config key {key:?} is required")))
}

fn resolve_lambda(
    lambda: Option<f64>,
    schedule: &LambdaSchedule,
    n: usize,
    kernel: &MaternKernel,
) -> Result<f64> {
    match lambda {
        Some(l) if l > 0.0 && l.is_finite() => Ok(l),
        Some(l) => Err(Error::Config(format!("lambda must be positive, got {l}"))),
        None => schedule.value(n, kernel.sobolev_order(), kernel.dim()),
    }
}

fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(
            rec.iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("bad number {s:?} in {}", path.display()))
                    })
                })
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    Ok(out)
}

fn header(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}_{i}")).collect()
}

fn csv_bytes(head: Vec<String>, rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&head)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn config_help<T: Serialize + Default>() -> String {
    let json = serde_json::to_string_pretty(&T::default()).unwrap_or_default();
    format!(
        "Config keys and defaults (JSON; pass a file with --config or single keys with --set):\n{json}"
    )
}

/// The clap command with config defaults appended to each subcommand's help.
pub fn command() -> clap::Command {
    Cli::command()
        .mut_subcommand("kernel-eval", |c| {
            c.after_help(config_help::<KernelEvalConfig>())
        })
        .mut_subcommand("design", |c| c.after_help(config_help::<DesignConfig>()))
        .mut_subcommand("krr-fit", |c| c.after_help(config_help::<KrrFitConfig>()))
        .mut_subcommand("krr-predict", |c| {
            c.after_help(config_help::<KrrPredictConfig>())
        })
        .mut_subcommand("calibrate", |c| {
            c.after_help(config_help::<CalibrateConfig>())
        })
        .mut_subcommand("study-sec4", |c| c.after_help(config_help::<StudyConfig>()))
        .mut_subcommand("study-krr", |c| {
            c.after_help(config_help::<KrrStudyConfig>())
        })
        .mut_subcommand("report", |c| c.after_help(config_help::<ReportConfig>()))
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::KernelEval(c)
        | Command::KrrFit(c)
        | Command::KrrPredict(c)
        | Command::Calibrate(c)
        | Command::StudySec4(c)
        | Command::StudyKrr(c)
        | Command::Report(c) => c,
        Command::Design { common, .. } => common,
    }
}

/// Runs one parsed command.
pub fn dispatch(cli: &Cli) -> Result<()> {
    let c = common(&cli.command);
    match c.threads {
        Some(0) => return Err(Error::Config("--threads must be at least 1".into())),
        Some(t) => {
            // a global pool can only be installed once per process
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build_global();
        }
        None => {}
    }
    match &cli.command {
        Command::KernelEval(c) => kernel_eval(c),
        Command::Design { common, n, domain } => {
            let mut extra = Vec::new();
            if let Some(n) = n {
                extra.push(("n".to_string(), Value::from(*n)));
            }
            if let Some(d) = domain {
                extra.push((
                    "domain".to_string(),
                    serde_json::to_value(parse_domain(d)?)?,
                ));
            }
            design(common, extra)
        }
        Command::KrrFit(c) => krr_fit_cmd(c),
        Command::KrrPredict(c) => krr_predict_cmd(c),
        Command::Calibrate(c) => calibrate(c),
        Command::StudySec4(c) => study_sec4(c),
        Command::StudyKrr(c) => study_krr(c),
        Command::Report(c) => report(c),
    }
}

fn kernel_eval(c: &Common) -> Result<()> {
    let cfg: KernelEvalConfig = resolve_config(c, vec![])?;
    let d = cfg.kernel.dim();
    let mut rows = Vec::with_capacity(cfg.lags.len());
    for lag in &cfg.lags {
        let v = if cfg.general_bessel {
            cfg.kernel.eval_general(lag)?
        } else {
            cfg.kernel.eval(lag)?
        };
        let mut row: Vec<String> = lag.iter().map(|x| fmt_f64(*x)).collect();
        row.push(fmt_f64(v));
        rows.push(row);
    }
    let mut head = header("lag", d);
    head.push("value".into());
    let mut g = FileGroup::new(&c.out);
    g.write("kernel_eval.csv", &csv_bytes(head, rows)?)?;
    manifest(&mut g, "kernel-eval", &cfg)?;
    g.commit()?;
    Ok(())
}

fn design(c: &Common, extra: Vec<(String, Value)>) -> Result<()> {
    let cfg: DesignConfig = resolve_config(c, extra)?;
    let design = sobol_design(cfg.n, &cfg.domain)?;
    let metrics = quasi_uniformity_report_with(&design, cfg.fill_lattice)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    design.write_records(&mut w)?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut g = FileGroup::new(&c.out);
    g.write("design.csv", &bytes)?;
    g.write_json("metrics.json", &metrics)?;
    manifest(&mut g, "design", &cfg)?;
    g.commit()?;
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    n: usize,
    lambda: f64,
    jitter: f64,
    rkhs_norm_sq: f64,
    train_rmse: f64,
}

fn krr_fit_cmd(c: &Common) -> Result<()> {
    let cfg: KrrFitConfig = resolve_config(c, vec![])?;
    let data = Dataset::read_csv(required(&cfg.data, "data")?, cfg.domain.clone())?;
    let lambda = resolve_lambda(cfg.lambda, &cfg.lambda_schedule, data.len(), &cfg.kernel)?;
    let fit = krr_fit(&cfg.kernel, &data, lambda)?;
    let n = data.len() as f64;
    let train_rmse = (data
        .design()
        .points()
        .iter()
        .zip(data.y())
        .map(|(x, y)| (y - fit.expansion().eval(x)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let summary = FitSummary {
        n: fit.n(),
        lambda,
        jitter: fit.jitter(),
        rkhs_norm_sq: fit_rkhs_norm_sq(&fit),
        train_rmse,
    };
    let mut g = FileGroup::new(&c.out);
    g.write("fit.csv", &fit.to_csv_bytes()?)?;
    g.write_json("fit_summary.json", &summary)?;
    manifest(&mut g, "krr-fit", &cfg)?;
    g.commit()?;
    Ok(())
}

fn krr_predict_cmd(c: &Common) -> Result<()> {
    let cfg: KrrPredictConfig = resolve_config(c, vec![])?;
    let fit = KrrFit::read_csv(required(&cfg.fit, "fit")?)?;
    let points = read_points(required(&cfg.points, "points")?)?;
    let d = fit.kernel().dim();
    let mut rows = Vec::with_capacity(points.len());
    for p in &points {
        if p.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: p.len(),
            });
        }
        let mut row: Vec<String> = p.iter().map(|x| fmt_f64(*x)).collect();
        row.push(fmt_f64(fit.expansion().eval(p)));
        rows.push(row);
    }
    let mut head = header("x", d);
    head.push("prediction".into());
    let mut g = FileGroup::new(&c.out);
    g.write("predictions.csv", &csv_bytes(head, rows)?)?;
    manifest(&mut g, "krr-predict", &cfg)?;
    g.commit()?;
    Ok(())
}

fn calibrate(c: &Common) -> Result<()> {
    let cfg: CalibrateConfig = resolve_config(c, vec![])?;
    let choice: ReadingChoice = cfg.reading.parse()?;
    let theta_box = Domain::interval(cfg.theta_lower, cfg.theta_upper)
        .map_err(|e| Error::Config(format!("theta box: {e}")))?;
    let data = Dataset::read_csv(required(&cfg.data, "data")?, cfg.domain.clone())?;
    let lambda = resolve_lambda(cfg.lambda, &cfg.lambda_schedule, data.len(), &cfg.kernel)?;
    let (reading, table) = match choice {
        ReadingChoice::Fixed(r) => (r, None),
        ReadingChoice::Auto => {
            let table = reading_table(&cfg.oracle)?;
            (adopt_reading(&table)?, Some(table))
        }
    };
    let sim = benchmark::simulator_registry(&cfg.simulator, reading)?;
    let prepared = PreparedDesign::new(data.design().clone(), sim, cfg.kernel, lambda, theta_box)?;
    let obj = prepared.bind(data.y())?;
    let estimate = estimate_theta_with(&obj, &cfg.estimator)?;
    let decomposition = obj.decomposed(&estimate.theta_hat)?;
    let out = serde_json::json!({
        "simulator": cfg.simulator,
        "reading": reading,
        "readings": table,
        "lambda": lambda,
        "n": data.len(),
        "theta_hat": estimate.theta_hat,
        "objective_value": estimate.objective_value,
        "decomposition": decomposition,
        "trace": estimate.trace,
    });
    let mut g = FileGroup::new(&c.out);
    g.write_json("estimate.json", &out)?;
    manifest(&mut g, "calibrate", &cfg)?;
    g.commit()?;
    Ok(())
}

fn study_sec4(c: &Common) -> Result<()> {
    let cfg: StudyConfig = resolve_config(c, vec![])?;
    cfg.validate()?;
    let report = run_convergence_study(&cfg)?;
    let mut g = FileGroup::new(&c.out);
    stage_report(&report, &mut g)?;
    manifest(&mut g, "study-sec4", &cfg)?;
    g.commit()?;
    Ok(())
}

fn study_krr(c: &Common) -> Result<()> {
    let cfg: KrrStudyConfig = resolve_config(c, vec![])?;
    let (density, kinks) = target_density(&cfg.target)?;
    let f = IntegralClassFunction::new(cfg.kernel, density, cfg.domain.clone())?
        .with_quadrature(cfg.quadrature)?
        .with_kinks(kinks);
    let lambda = match cfg.lambda {
        Some(l) => LambdaRule::Fixed(l),
        None => LambdaRule::Schedule(cfg.lambda_schedule),
    };
    let settings = KrrStudySettings {
        sizes: cfg.sizes.clone(),
        replicates: cfg.replicates,
        noise_sd: cfg.noise_sd,
        lambda,
        seed: cfg.seed,
    };
    let report = run_krr_rate_study(&cfg.kernel, &f, &settings)?;
    let mut g = FileGroup::new(&c.out);
    stage_report(&report, &mut g)?;
    manifest(&mut g, "study-krr", &cfg)?;
    g.commit()?;
    Ok(())
}

fn report(c: &Common) -> Result<()> {
    let cfg: ReportConfig = resolve_config(c, vec![])?;
    let records = read_results_csv(required(&cfg.results, "results")?)?;
    let summary = summarize_records(&records)?;
    let svg = plot_svg(
        &summary.sizes,
        &summary.mean_errors,
        &summary.fit,
        "mean error against n",
    );
    let mut g = FileGroup::new(&c.out);
    g.write_json("summary.json", &summary)?;
    g.write("plot.svg", svg.as_bytes())?;
    manifest(&mut g, "report", &cfg)?;
    g.commit()?;
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are printed to stderr as one JSON object.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = serde_json::json!({
                "error": e.kind(),
                "exit_code": e.exit_code(),
                "message": e.to_string(),
            });
            eprintln!("{msg}");
            e.exit_code()
        }
    }
}
