//! One-dimensional calibration benchmark on `Ω = [-1, 1]` with the
//! exponential kernel `Φ(x) = e^{-|x|}`.
//!
//! The true process is `ξ(x) = ∫_Ω Φ(x - t) Φ(t) dt`, and the computer model is
//! `y^s(x, θ) = ξ(x) - ζ^θ(x)` with an integral-class discrepancy
//! `ζ^θ = ∫_Ω Φ(· - t) v_θ(t) dt`. Several readings of `v_θ` are plausible;
//! each is affine in `θ` and they are compared by the θ′ they produce.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::{theta_prime_oracle, OracleOptions, Simulator, ThetaPrime};
use crate::design::Domain;
use crate::error::{Error, Result};
use crate::kernel::MaternKernel;
use crate::quadrature::QuadratureConfig;
use crate::rkhs::{Density, IntegralClassFunction};

/// Registry identifier of the benchmark simulator.
pub const SIMULATOR_ID: &str = "ko-sec4";

/// Value of θ′ the readings are ranked against.
pub const TARGET_THETA_PRIME: f64 = 0.672;

pub fn kernel() -> MaternKernel {
    MaternKernel::exponential()
}

pub fn domain() -> Domain {
    Domain::interval(-1.0, 1.0).expect("valid interval")
}

/// Box searched by the θ′ oracle and the estimator by default.
pub fn default_theta_box() -> Domain {
    Domain::interval(-5.0, 5.0).expect("valid interval")
}

/// Closed form of `∫_{-1}^{1} e^{-|x-t|} e^{-|t|} dt` for `|x| ≤ 1`:
/// `(1 + |x|) e^{-|x|} - (e^{x-2} + e^{-x-2}) / 2`.
pub fn xi(x: f64) -> f64 {
    let a = x.abs();
    (1.0 + a) * (-a).exp() - 0.5 * ((x - 2.0).exp() + (-x - 2.0).exp())
}

fn phi(t: f64) -> f64 {
    (-t.abs()).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reading {
    /// `v_θ(t) = θt² + 0.8`
    DiscrepancyAsWritten,
    /// `v_θ(t) = Φ(t) - (θt² + 0.8)`, so `y^s = ∫ Φ(x - t)(θt² + 0.8) dt`
    XiMinusQuadratic,
    /// `v_θ(t) = Φ(t)(θt² + 0.8)`
    WeightedAsWritten,
    /// `v_θ(t) = Φ(t)(1 - θt² - 0.8)`, so `y^s = ∫ Φ(x - t) Φ(t)(θt² + 0.8) dt`
    XiMinusWeightedQuadratic,
}

impl Reading {
    pub const ALL: [Reading; 4] = [
        Reading::DiscrepancyAsWritten,
        Reading::XiMinusQuadratic,
        Reading::WeightedAsWritten,
        Reading::XiMinusWeightedQuadratic,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Reading::DiscrepancyAsWritten => "discrepancy-as-written",
            Reading::XiMinusQuadratic => "xi-minus-quadratic",
            Reading::WeightedAsWritten => "weighted-as-written",
            Reading::XiMinusWeightedQuadratic => "xi-minus-weighted-quadratic",
        }
    }

    /// `v_θ(t)`.
    pub fn density_value(self, theta: f64, t: f64) -> f64 {
        let q = theta * t * t + 0.8;
        match self {
            Reading::DiscrepancyAsWritten => q,
            Reading::XiMinusQuadratic => phi(t) - q,
            Reading::WeightedAsWritten => phi(t) * q,
            Reading::XiMinusWeightedQuadratic => phi(t) * (1.0 - q),
        }
    }

    pub fn density(self, theta: f64) -> Density {
        Arc::new(move |t: &[f64]| self.density_value(theta, t[0]))
    }

    /// Pieces of `v_θ = v_0 + θ v_1`.
    fn affine_parts(self) -> (Density, Density) {
        let v0 = self.density(0.0);
        let v1: Density = Arc::new(move |t: &[f64]| {
            self.density_value(1.0, t[0]) - self.density_value(0.0, t[0])
        });
        (v0, v1)
    }
}

impl fmt::Display for Reading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Reading {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Reading::ALL
            .into_iter()
            .find(|r| r.id() == s)
            .ok_or_else(|| {
                let ids: Vec<&str> = Reading::ALL.iter().map(|r| r.id()).collect();
                Error::Config(format!(
                    "unknown reading {s:?}; expected auto or one of {ids:?}"
                ))
            })
    }
}

/// Either a fixed reading or `auto`, which adopts the reading whose θ′ is
/// closest to [`TARGET_THETA_PRIME`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadingChoice {
    Auto,
    Fixed(Reading),
}

impl FromStr for ReadingChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            Ok(ReadingChoice::Auto)
        } else {
            s.parse().map(ReadingChoice::Fixed)
        }
    }
}

impl fmt::Display for ReadingChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReadingChoice::Auto => f.write_str("auto"),
            ReadingChoice::Fixed(r) => r.fmt(f),
        }
    }
}

/// `y^s(x, θ) = ξ(x) - ζ^θ(x)` for one reading, with `ζ^θ = f_0 + θ f_1`
/// evaluated by quadrature.
#[derive(Debug, Clone)]
pub struct BenchmarkSimulator {
    reading: Reading,
    f0: IntegralClassFunction,
    f1: IntegralClassFunction,
}

impl BenchmarkSimulator {
    pub fn new(reading: Reading) -> Result<Self> {
        Self::with_quadrature(reading, QuadratureConfig::default())
    }

    pub fn with_quadrature(reading: Reading, quadrature: QuadratureConfig) -> Result<Self> {
        let (v0, v1) = reading.affine_parts();
        let build = |v: Density| -> Result<IntegralClassFunction> {
            Ok(IntegralClassFunction::new(kernel(), v, domain())?
                .with_quadrature(quadrature)?
                .with_kinks(vec![0.0]))
        };
        Ok(Self {
            reading,
            f0: build(v0)?,
            f1: build(v1)?,
        })
    }

    pub fn reading(&self) -> Reading {
        self.reading
    }

    /// `ζ^θ(x)`.
    pub fn discrepancy(&self, x: &[f64], theta: f64) -> Result<f64> {
        Ok(self.f0.eval(x)? + theta * self.f1.eval(x)?)
    }
}

impl Simulator for BenchmarkSimulator {
    fn name(&self) -> &str {
        SIMULATOR_ID
    }

    fn theta_dim(&self) -> usize {
        1
    }

    fn linear_in_theta(&self) -> bool {
        true
    }

    fn eval(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        if x.len() != 1 || theta.len() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: if x.len() != 1 { x.len() } else { theta.len() },
            });
        }
        Ok(xi(x[0]) - self.discrepancy(x, theta[0])?)
    }
}

/// Looks up a simulator by identifier.
pub fn simulator_registry(id: &str, reading: Reading) -> Result<Arc<dyn Simulator>> {
    match id {
        SIMULATOR_ID => Ok(Arc::new(BenchmarkSimulator::new(reading)?)),
        other => Err(Error::Config(format!(
            "unknown simulator {other:?}; available: [{SIMULATOR_ID:?}]"
        ))),
    }
}

/// θ′ for one reading.
pub fn reading_oracle(reading: Reading, opts: &OracleOptions) -> Result<ThetaPrime> {
    let mut opts = opts.clone();
    opts.affine = true;
    if !opts.kinks.contains(&0.0) {
        opts.kinks.push(0.0);
    }
    let builder = move |th: &[f64]| reading.density(th[0]);
    theta_prime_oracle(&builder, &kernel(), &domain(), &default_theta_box(), &opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadingRow {
    pub reading: Reading,
    pub theta_prime: f64,
    pub vertex: f64,
    pub norm_sq: f64,
    /// `|θ′ - TARGET_THETA_PRIME|`
    pub deviation: f64,
}

/// θ′ of every reading, in [`Reading::ALL`] order.
pub fn reading_table(opts: &OracleOptions) -> Result<Vec<ReadingRow>> {
    Reading::ALL
        .iter()
        .map(|&reading| {
            let tp = reading_oracle(reading, opts)?;
            let theta_prime = tp.theta_prime[0];
            Ok(ReadingRow {
                reading,
                theta_prime,
                vertex: tp.vertex.map(|v| v[0]).unwrap_or(f64::NAN),
                norm_sq: tp.norm_sq,
                deviation: (theta_prime - TARGET_THETA_PRIME).abs(),
            })
        })
        .collect()
}

/// Reading with the smallest deviation; the first one wins ties.
pub fn adopt_reading(table: &[ReadingRow]) -> Result<Reading> {
    table
        .iter()
        .min_by(|a, b| a.deviation.total_cmp(&b.deviation))
        .map(|r| r.reading)
        .ok_or_else(|| Error::InvalidArgument("empty reading table".into()))
}
