//! Kernel ridge regression in the native space of a Matérn kernel.
//!
//! The estimator minimizes `(1/n) Σ (y_i - g(x_i))² + λ ‖g‖²` and has the
//! representer form `f̂ = Σ c_i Φ(· - x_i)` with `c = (Φ + nλI)⁻¹ y`.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::design::{fmt_f64, Design, Domain};
use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, MaternKernel};
use crate::linalg::SpdFactor;
use crate::rkhs::{KernelExpansion, DEFAULT_JITTER};

/// Observations `y_i` at the points of a design.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    design: Design,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(design: Design, y: Vec<f64>) -> Result<Self> {
        if y.len() != design.len() {
            return Err(Error::DimensionMismatch {
                expected: design.len(),
                got: y.len(),
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation".into()));
        }
        Ok(Self { design, y })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Columns `x_1..x_d, y`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.design.dim()).map(|k| format!("x_{k}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for (p, y) in self.design.points().iter().zip(&self.y) {
            let mut row: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(*y));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `x_1..x_d, y`; `d` is taken from the domain.
    pub fn read_csv<P: AsRef<Path>>(path: P, domain: Domain) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let d = domain.dim();
        let mut points = Vec::new();
        let mut y = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals = parse_row(&rec)?;
            if vals.len() != d + 1 {
                return Err(Error::DimensionMismatch {
                    expected: d + 1,
                    got: vals.len(),
                });
            }
            points.push(vals[..d].to_vec());
            y.push(vals[d]);
        }
        Self::new(Design::new(points, domain)?, y)
    }
}

fn parse_row(rec: &csv::StringRecord) -> Result<Vec<f64>> {
    rec.iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrrFit {
    expansion: KernelExpansion,
    lambda: f64,
    n: usize,
    /// Extra diagonal added only when `Φ + nλI` failed to factor.
    jitter: f64,
}

impl KrrFit {
    pub fn expansion(&self) -> &KernelExpansion {
        &self.expansion
    }

    pub fn coeffs(&self) -> &[f64] {
        self.expansion.coeffs()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn kernel(&self) -> &MaternKernel {
        self.expansion.kernel()
    }

    /// Metadata line, header `x_1..x_d, coeff`, one center per row.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_to(File::create(path)?)
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    fn write_to<W: Write>(&self, mut file: W) -> Result<()> {
        let k = self.kernel();
        writeln!(
            file,
            "# lambda={} n={} jitter={} nu={} phi={} dim={}",
            fmt_f64(self.lambda),
            self.n,
            fmt_f64(self.jitter),
            fmt_f64(k.nu()),
            fmt_f64(k.phi()),
            k.dim()
        )?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<String> = (1..=k.dim()).map(|i| format!("x_{i}")).collect();
        header.push("coeff".into());
        w.write_record(&header)?;
        for (c, b) in self.expansion.centers().iter().zip(self.expansion.coeffs()) {
            let mut row: Vec<String> = c.iter().map(|v| fmt_f64(*v)).collect();
            row.push(fmt_f64(*b));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = File::open(path)?;
        let mut reader = BufReader::new(file);
        let mut meta = String::new();
        reader.read_line(&mut meta)?;
        let meta = meta
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::InvalidArgument("fit file lacks metadata line".into()))?;
        let mut lambda = None;
        let mut n = None;
        let mut jitter = 0.0;
        let (mut nu, mut phi, mut dim) = (None, None, None);
        for kv in meta.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("bad metadata entry {kv:?}")))?;
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad metadata value {s:?}: {e}")))
            };
            match k {
                "lambda" => lambda = Some(num(v)?),
                "n" => n = Some(num(v)? as usize),
                "jitter" => jitter = num(v)?,
                "nu" => nu = Some(num(v)?),
                "phi" => phi = Some(num(v)?),
                "dim" => dim = Some(num(v)? as usize),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown metadata key {other:?}"
                    )))
                }
            }
        }
        let missing = |name: &str| Error::InvalidArgument(format!("fit metadata lacks {name}"));
        let kernel = MaternKernel::new(
            nu.ok_or_else(|| missing("nu"))?,
            phi.ok_or_else(|| missing("phi"))?,
            dim.ok_or_else(|| missing("dim"))?,
        )?;
        let mut r = csv::Reader::from_reader(reader);
        let mut centers = Vec::new();
        let mut coeffs = Vec::new();
        for rec in r.records() {
            let vals = parse_row(&rec?)?;
            if vals.len() != kernel.dim() + 1 {
                return Err(Error::DimensionMismatch {
                    expected: kernel.dim() + 1,
                    got: vals.len(),
                });
            }
            centers.push(vals[..kernel.dim()].to_vec());
            coeffs.push(vals[kernel.dim()]);
        }
        Ok(Self {
            expansion: KernelExpansion::new(kernel, centers, coeffs)?,
            lambda: lambda.ok_or_else(|| missing("lambda"))?,
            n: n.ok_or_else(|| missing("n"))?,
            jitter,
        })
    }
}

/// Factor of `Φ + nλI`, retried once with [`DEFAULT_JITTER`] added when the
/// shifted matrix is numerically singular (tiny λ on dense designs).
pub(crate) fn ridge_factor(
    kernel: &MaternKernel,
    design: &Design,
    lambda: f64,
) -> Result<(SpdFactor, f64)> {
    let n = design.len() as f64;
    let gram = kernel_matrix(kernel, design.points());
    match SpdFactor::shifted(gram.clone(), n * lambda) {
        Ok(f) => Ok((f, 0.0)),
        Err(Error::NotPositiveDefinite(_)) => {
            SpdFactor::shifted(gram, n * lambda + DEFAULT_JITTER).map(|f| (f, DEFAULT_JITTER))
        }
        Err(e) => Err(e),
    }
}

pub fn krr_fit(kernel: &MaternKernel, data: &Dataset, lambda: f64) -> Result<KrrFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if data.design().dim() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: data.design().dim(),
        });
    }
    let (factor, jitter) = ridge_factor(kernel, data.design(), lambda)?;
    let c = factor.solve(&DVector::from_column_slice(data.y()));
    let expansion = KernelExpansion::new(
        *kernel,
        data.design().points().to_vec(),
        c.iter().copied().collect(),
    )?;
    Ok(KrrFit {
        expansion,
        lambda,
        n: data.len(),
        jitter,
    })
}

pub fn krr_predict(fit: &KrrFit, x: &[f64]) -> f64 {
    fit.expansion.eval(x)
}

/// `sqrt((1/n) Σ f(x_i)²)` over the design points.
pub fn empirical_seminorm<F: Fn(&[f64]) -> f64>(f: F, design: &Design) -> f64 {
    let n = design.len() as f64;
    (design.points().iter().map(|p| f(p).powi(2)).sum::<f64>() / n).sqrt()
}

/// `cᵀ Φ c`.
pub fn fit_rkhs_norm_sq(fit: &KrrFit) -> f64 {
    fit.expansion.norm_sq().max(0.0)
}

/// Penalized least-squares objective of any expansion on a dataset.
pub fn krr_objective(g: &KernelExpansion, data: &Dataset, lambda: f64) -> f64 {
    let n = data.len() as f64;
    let rss: f64 = data
        .design()
        .points()
        .iter()
        .zip(data.y())
        .map(|(p, y)| (y - g.eval(p)).powi(2))
        .sum();
    rss / n + lambda * g.norm_sq()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    /// `λ = n^(-2m/(2m+d))`
    Standard,
    /// `λ = n^(-2m/(4m+d))`
    Improved,
}

/// `constant · n^(-exponent)` for the chosen schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSchedule {
    pub kind: ScheduleKind,
    #[serde(default = "unit")]
    pub constant: f64,
}

fn unit() -> f64 {
    1.0
}

impl LambdaSchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self {
            kind,
            constant: 1.0,
        }
    }

    pub fn value(&self, n: usize, m: f64, d: usize) -> Result<f64> {
        if !(self.constant > 0.0 && self.constant.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "schedule constant must be positive, got {}",
                self.constant
            )));
        }
        Ok(self.constant * lambda_schedule(self.kind, n, m, d)?)
    }
}

pub fn lambda_schedule(kind: ScheduleKind, n: usize, m: f64, d: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("schedule needs n >= 1".into()));
    }
    if d == 0 || !(m > d as f64 / 2.0) || !m.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "schedule needs m > d/2, got m = {m}, d = {d}"
        )));
    }
    let d = d as f64;
    let exponent = match kind {
        ScheduleKind::Standard => 2.0 * m / (2.0 * m + d),
        ScheduleKind::Improved => 2.0 * m / (4.0 * m + d),
    };
    Ok((n as f64).powf(-exponent))
}
