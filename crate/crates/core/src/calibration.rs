//! Frequentist Kennedy–O'Hagan calibration.
//!
//! With `A = Φ + nλI` and residuals `Y_θ = y - y^s(X, θ)` the estimator is
//!
//! ```text
//! θ̂ = argmin_θ  λ · Y_θᵀ A⁻¹ Y_θ
//! ```
//!
//! which equals the minimum over `g` of the KRR objective fitted to `Y_θ`.
//! `A` does not depend on `θ`, so it is factored once and every objective
//! evaluation costs a triangular solve, or `O(n·p)` when the simulator is
//! affine in `θ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{Design, Domain};
use crate::error::{Error, Result};
use crate::kernel::{kernel_matrix, MaternKernel};
use crate::krr::{ridge_factor, Dataset};
use crate::linalg::SpdFactor;
use crate::optimize::{golden_section, linspace, nelder_mead_box};
use crate::quadrature::QuadratureConfig;
use crate::rkhs::{Density, PairRule};

/// Computer model `y^s(x, θ)`.
///
/// Implementations must be deterministic. Setting `linear_in_theta` promises
/// that `θ ↦ y^s(x, θ)` is affine for every `x`, which enables the exact
/// normal-equation solution.
pub trait Simulator: Send + Sync {
    fn name(&self) -> &str;
    fn theta_dim(&self) -> usize;
    fn linear_in_theta(&self) -> bool {
        false
    }
    fn eval(&self, x: &[f64], theta: &[f64]) -> Result<f64>;
}

type SimFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

/// Simulator backed by a closure.
#[derive(Clone)]
pub struct FnSimulator {
    name: String,
    theta_dim: usize,
    linear: bool,
    f: Arc<SimFn>,
}

impl FnSimulator {
    pub fn new<F>(name: &str, theta_dim: usize, linear: bool, f: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.to_string(),
            theta_dim,
            linear,
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for FnSimulator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnSimulator")
            .field("name", &self.name)
            .field("theta_dim", &self.theta_dim)
            .field("linear", &self.linear)
            .finish_non_exhaustive()
    }
}

impl Simulator for FnSimulator {
    fn name(&self) -> &str {
        &self.name
    }

    fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    fn linear_in_theta(&self) -> bool {
        self.linear
    }

    fn eval(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        let v = (self.f)(x, theta);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!(
                "simulator {} at x={x:?}, θ={theta:?}",
                self.name
            )))
        }
    }
}

/// Physical data, computer model, kernel, regularization and parameter box.
#[derive(Clone)]
pub struct CalibrationProblem {
    pub physical: Dataset,
    pub sim: Arc<dyn Simulator>,
    pub kernel: MaternKernel,
    pub lambda: f64,
    pub theta_box: Domain,
}

impl fmt::Debug for CalibrationProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CalibrationProblem")
            .field("n", &self.physical.len())
            .field("sim", &self.sim.name())
            .field("kernel", &self.kernel)
            .field("lambda", &self.lambda)
            .field("theta_box", &self.theta_box)
            .finish()
    }
}

impl CalibrationProblem {
    pub fn new(
        physical: Dataset,
        sim: Arc<dyn Simulator>,
        kernel: MaternKernel,
        lambda: f64,
        theta_box: Domain,
    ) -> Result<Self> {
        let p = Self {
            physical,
            sim,
            kernel,
            lambda,
            theta_box,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        self.theta_box.validate()?;
        if self.theta_box.dim() != self.sim.theta_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.sim.theta_dim(),
                got: self.theta_box.dim(),
            });
        }
        if self.physical.design().dim() != self.kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kernel.dim(),
                got: self.physical.design().dim(),
            });
        }
        Ok(())
    }

    /// Factors `Φ + nλI` and binds the observations.
    pub fn prepare(&self) -> Result<PreparedDesign> {
        PreparedDesign::new(
            self.physical.design().clone(),
            self.sim.clone(),
            self.kernel,
            self.lambda,
            self.theta_box.clone(),
        )
    }
}

/// Affine simulator written as `y^s(X, θ) = offset + B θ`, with `W = L⁻¹ B`.
#[derive(Debug, Clone)]
struct AffineBasis {
    offset: DVector<f64>,
    whitened: DMatrix<f64>,
}

/// Everything about a calibration problem that does not depend on the
/// observations: the factor of `Φ + nλI` and, for affine simulators, the
/// whitened simulator basis. Shared across replicates and threads.
pub struct PreparedDesign {
    kernel: MaternKernel,
    design: Design,
    lambda: f64,
    jitter: f64,
    gram: DMatrix<f64>,
    factor: SpdFactor,
    sim: Arc<dyn Simulator>,
    theta_box: Domain,
    affine: Option<AffineBasis>,
}

impl fmt::Debug for PreparedDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreparedDesign")
            .field("n", &self.design.len())
            .field("lambda", &self.lambda)
            .field("jitter", &self.jitter)
            .field("sim", &self.sim.name())
            .field("affine", &self.affine.is_some())
            .finish_non_exhaustive()
    }
}

impl PreparedDesign {
    pub fn new(
        design: Design,
        sim: Arc<dyn Simulator>,
        kernel: MaternKernel,
        lambda: f64,
        theta_box: Domain,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        theta_box.validate()?;
        if theta_box.dim() != sim.theta_dim() {
            return Err(Error::DimensionMismatch {
                expected: sim.theta_dim(),
                got: theta_box.dim(),
            });
        }
        let (factor, jitter) = ridge_factor(&kernel, &design, lambda)?;
        let gram = kernel_matrix(&kernel, design.points());
        let affine = if sim.linear_in_theta() {
            let p = sim.theta_dim();
            let n = design.len();
            let zero = vec![0.0; p];
            let offset = design
                .points()
                .par_iter()
                .map(|x| sim.eval(x, &zero))
                .collect::<Result<Vec<f64>>>()?;
            let mut basis = DMatrix::zeros(n, p);
            for k in 0..p {
                let mut e = zero.clone();
                e[k] = 1.0;
                let col = design
                    .points()
                    .par_iter()
                    .map(|x| sim.eval(x, &e))
                    .collect::<Result<Vec<f64>>>()?;
                for i in 0..n {
                    basis[(i, k)] = col[i] - offset[i];
                }
            }
            Some(AffineBasis {
                offset: DVector::from_vec(offset),
                whitened: factor.solve_lower_matrix(&basis),
            })
        } else {
            None
        };
        Ok(Self {
            kernel,
            design,
            lambda,
            jitter,
            gram,
            factor,
            sim,
            theta_box,
            affine,
        })
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn kernel(&self) -> &MaternKernel {
        &self.kernel
    }

    pub fn theta_box(&self) -> &Domain {
        &self.theta_box
    }

    /// Extra diagonal added to make the factorization succeed; zero normally.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn is_affine(&self) -> bool {
        self.affine.is_some()
    }

    /// Binds observations `y` to obtain an evaluable objective.
    pub fn bind(&self, y: &[f64]) -> Result<KoObjective<'_>> {
        if y.len() != self.design.len() {
            return Err(Error::DimensionMismatch {
                expected: self.design.len(),
                got: y.len(),
            });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("observation {i}")));
        }
        let y = DVector::from_column_slice(y);
        let whitened_offset = self
            .affine
            .as_ref()
            .map(|a| self.factor.solve_lower(&(&y - &a.offset)));
        Ok(KoObjective {
            prepared: self,
            y,
            whitened_offset,
        })
    }
}

/// `θ ↦ λ Y_θᵀ (Φ + nλI)⁻¹ Y_θ` for fixed observations.
#[derive(Debug)]
pub struct KoObjective<'a> {
    prepared: &'a PreparedDesign,
    y: DVector<f64>,
    /// `L⁻¹ (y - offset)` for affine simulators.
    whitened_offset: Option<DVector<f64>>,
}

/// The two summands of the objective: the training error of the KRR fit of
/// `Y_θ` and its penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// `(1/n) Σ (Y_i - ζ̂(x_i))² = nλ² ‖A⁻¹Y‖²`
    pub train_term: f64,
    /// `λ ‖ζ̂‖² = λ Yᵀ A⁻¹ Φ A⁻¹ Y`
    pub norm_term: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        self.train_term + self.norm_term
    }
}

impl KoObjective<'_> {
    pub fn prepared(&self) -> &PreparedDesign {
        self.prepared
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let bx = &self.prepared.theta_box;
        if theta.len() != bx.dim() {
            return Err(Error::DimensionMismatch {
                expected: bx.dim(),
                got: theta.len(),
            });
        }
        if !bx.contains(theta) {
            return Err(Error::InvalidArgument(format!("θ = {theta:?} outside Θ")));
        }
        Ok(())
    }

    /// `Y_θ` by direct simulator evaluation.
    pub fn residual(&self, theta: &[f64]) -> Result<DVector<f64>> {
        self.check_theta(theta)?;
        let sim = &self.prepared.sim;
        let ys = self
            .prepared
            .design
            .points()
            .par_iter()
            .map(|x| sim.eval(x, theta))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DVector::from_iterator(
            ys.len(),
            self.y.iter().zip(&ys).map(|(y, s)| y - s),
        ))
    }

    /// Objective value; uses the whitened affine basis when available.
    pub fn value(&self, theta: &[f64]) -> Result<f64> {
        match (&self.whitened_offset, &self.prepared.affine) {
            (Some(w0), Some(a)) => {
                self.check_theta(theta)?;
                let v = self.prepared.lambda * affine_value(w0, &a.whitened, theta);
                finite(v, theta)
            }
            _ => self.value_direct(theta),
        }
    }

    /// Objective value from a fresh residual vector.
    pub fn value_direct(&self, theta: &[f64]) -> Result<f64> {
        let r = self.residual(theta)?;
        finite(
            self.prepared.lambda * self.prepared.factor.inv_quad_form(&r),
            theta,
        )
    }

    pub fn decomposed(&self, theta: &[f64]) -> Result<Decomposition> {
        let r = self.residual(theta)?;
        Ok(self.decompose_residual(&r))
    }

    fn decompose_residual(&self, r: &DVector<f64>) -> Decomposition {
        let p = self.prepared;
        let n = p.design.len() as f64;
        let lambda = p.lambda;
        let c = p.factor.solve(r);
        // the jitter, when present, is part of the kernel matrix the fit uses
        let phi_c = &p.gram * &c + &c * p.jitter;
        Decomposition {
            train_term: n * lambda * lambda * c.norm_squared(),
            norm_term: lambda * c.dot(&phi_c),
        }
    }

    /// Exact minimizer of the affine case by least squares in the whitened
    /// metric, clamped to Θ. `None` for non-affine simulators or a rank
    /// deficient basis.
    pub fn normal_equation_solution(&self) -> Option<Vec<f64>> {
        let (w0, a) = match (&self.whitened_offset, &self.prepared.affine) {
            (Some(w0), Some(a)) => (w0, a),
            _ => return None,
        };
        let w = &a.whitened;
        let gram = w.transpose() * w;
        let rhs = w.transpose() * w0;
        let theta = SpdFactor::new(gram).ok()?.solve(&rhs);
        let bx = &self.prepared.theta_box;
        Some(
            theta
                .iter()
                .enumerate()
                .map(|(k, t)| t.clamp(bx.lower[k], bx.upper[k]))
                .collect(),
        )
    }
}

fn affine_value(w0: &DVector<f64>, w: &DMatrix<f64>, theta: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..w0.len() {
        let mut e = w0[i];
        for (k, t) in theta.iter().enumerate() {
            e -= w[(i, k)] * t;
        }
        acc += e * e;
    }
    acc
}

fn finite(v: f64, theta: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("objective at θ = {theta:?}")))
    }
}

pub fn residual_vector(p: &CalibrationProblem, theta: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    let prepared = PreparedDesign::new(
        p.physical.design().clone(),
        p.sim.clone(),
        p.kernel,
        p.lambda,
        p.theta_box.clone(),
    )?;
    let obj = prepared.bind(p.physical.y())?;
    Ok(obj.residual(theta)?.iter().copied().collect())
}

pub fn ko_objective(p: &CalibrationProblem, theta: &[f64]) -> Result<f64> {
    let prepared = p.prepare()?;
    prepared.bind(p.physical.y())?.value_direct(theta)
}

pub fn ko_objective_decomposed(p: &CalibrationProblem, theta: &[f64]) -> Result<Decomposition> {
    let prepared = p.prepare()?;
    prepared.bind(p.physical.y())?.decomposed(theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateOptions {
    /// Grid nodes per axis of Θ.
    pub grid_points: usize,
    /// Parameter tolerance of the local refinement.
    pub tol: f64,
    /// Grid values within this relative distance of the best count as ties.
    pub tie_tol: f64,
    /// Upper bound on tied cells that are refined.
    pub max_refined: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            grid_points: 101,
            tol: 1e-8,
            tie_tol: 1e-12,
            max_refined: 64,
        }
    }
}

impl EstimateOptions {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        if !(self.tol > 0.0) || !(self.tie_tol >= 0.0) || self.max_refined == 0 {
            return Err(Error::Config(
                "tol, tie_tol and max_refined must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateTrace {
    pub grid_points: usize,
    pub grid_theta: Vec<f64>,
    pub grid_value: f64,
    /// Grid cells whose value tied with the best one (including it).
    pub ties: Vec<Vec<f64>>,
    pub refined_theta: Vec<f64>,
    pub refined_value: f64,
    pub normal_equations: Option<(Vec<f64>, f64)>,
    /// `"golden-section"`, `"nelder-mead"` or `"normal-equations"`.
    pub selected: String,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub theta_hat: Vec<f64>,
    pub objective_value: f64,
    pub trace: EstimateTrace,
}

pub fn estimate_theta(p: &CalibrationProblem) -> Result<Estimate> {
    let prepared = p.prepare()?;
    let obj = prepared.bind(p.physical.y())?;
    estimate_theta_with(&obj, &EstimateOptions::default())
}

/// Grid search over Θ, local refinement of every tied cell, and for affine
/// simulators the normal-equation solution; the best candidate wins.
pub fn estimate_theta_with(obj: &KoObjective<'_>, opts: &EstimateOptions) -> Result<Estimate> {
    opts.validate()?;
    let bx = obj.prepared.theta_box.clone();
    let p = bx.dim();
    let axes: Vec<Vec<f64>> = (0..p)
        .map(|k| linspace(bx.lower[k], bx.upper[k], opts.grid_points))
        .collect();
    let total = opts
        .grid_points
        .checked_pow(p as u32)
        .ok_or_else(|| Error::Config("grid too large".into()))?;
    let grid_theta = |mut idx: usize| -> Vec<f64> {
        let mut th = vec![0.0; p];
        for k in (0..p).rev() {
            th[k] = axes[k][idx % opts.grid_points];
            idx /= opts.grid_points;
        }
        th
    };
    // grid indices run lexicographically, so a stable order is kept
    let values = if obj.prepared.affine.is_some() {
        (0..total)
            .map(|i| obj.value(&grid_theta(i)))
            .collect::<Result<Vec<f64>>>()?
    } else {
        (0..total)
            .into_par_iter()
            .map(|i| obj.value(&grid_theta(i)))
            .collect::<Result<Vec<f64>>>()?
    };
    let mut evaluations = total;
    let best = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tie_band = opts.tie_tol * best.abs().max(1.0);
    let tied: Vec<usize> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v - best <= tie_band)
        .map(|(i, _)| i)
        .collect();
    let grid_best_idx = tied[0];

    let step: Vec<f64> = (0..p)
        .map(|k| (bx.upper[k] - bx.lower[k]) / (opts.grid_points - 1) as f64)
        .collect();
    let mut refined: Vec<(Vec<f64>, f64)> = Vec::new();
    for &idx in tied.iter().take(opts.max_refined) {
        let start = grid_theta(idx);
        let grid_val = values[idx];
        let cand = if p == 1 {
            let lo = (start[0] - step[0]).max(bx.lower[0]);
            let hi = (start[0] + step[0]).min(bx.upper[0]);
            let mut err = None;
            let r = golden_section(
                |t| match obj.value(&[t]) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                lo,
                hi,
                opts.tol,
            );
            if let Some(e) = err {
                return Err(e);
            }
            evaluations += r.evaluations;
            (vec![r.x], r.value)
        } else {
            let mut err = None;
            let r = nelder_mead_box(
                |t| match obj.value(t) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        f64::NAN
                    }
                },
                &start,
                &bx.lower,
                &bx.upper,
                &step,
                opts.tol,
                20_000,
            );
            if let Some(e) = err {
                return Err(e);
            }
            evaluations += r.evaluations;
            (r.x, r.value)
        };
        // keep the grid point unless refinement strictly improves on it
        refined.push(if cand.1 < grid_val {
            cand
        } else {
            (start, grid_val)
        });
    }
    let refined_best = refined.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let band = opts.tie_tol * refined_best.abs().max(1.0);
    let (refined_theta, refined_value) = refined
        .iter()
        .filter(|r| r.1 - refined_best <= band)
        .min_by(|a, b| lex_cmp(&a.0, &b.0))
        .cloned()
        .expect("at least one refined candidate");

    let normal = match obj.normal_equation_solution() {
        Some(th) => {
            evaluations += 1;
            let v = obj.value(&th)?;
            Some((th, v))
        }
        None => None,
    };
    let (theta_hat, objective_value, selected) = match &normal {
        Some((th, v)) if *v <= refined_value => (th.clone(), *v, "normal-equations"),
        _ => (
            refined_theta.clone(),
            refined_value,
            if p == 1 {
                "golden-section"
            } else {
                "nelder-mead"
            },
        ),
    };
    Ok(Estimate {
        theta_hat,
        objective_value,
        trace: EstimateTrace {
            grid_points: opts.grid_points,
            grid_theta: grid_theta(grid_best_idx),
            grid_value: values[grid_best_idx],
            ties: tied.iter().map(|&i| grid_theta(i)).collect(),
            refined_theta,
            refined_value,
            normal_equations: normal,
            selected: selected.to_string(),
            evaluations,
        },
    })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Settings of the θ′ oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleOptions {
    pub grid_points: usize,
    pub tol: f64,
    pub quadrature: QuadratureConfig,
    /// One-dimensional points where the densities are not smooth.
    pub kinks: Vec<f64>,
    /// Whether `θ ↦ v_θ` is affine, which enables the closed-form vertex.
    pub affine: bool,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            grid_points: 201,
            tol: 1e-10,
            quadrature: QuadratureConfig::default(),
            kinks: Vec::new(),
            affine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPrime {
    /// Minimizer found by grid search and local refinement.
    pub theta_prime: Vec<f64>,
    /// `‖ζ^θ′‖²` at that minimizer.
    pub norm_sq: f64,
    /// Unconstrained vertex of the quadratic `θ ↦ ‖ζ^θ‖²`, affine case only.
    pub vertex: Option<Vec<f64>>,
    /// `(θ, ‖ζ^θ‖²)` over the grid.
    pub norm_curve: Vec<(Vec<f64>, f64)>,
}

/// `θ′ = argmin_θ ‖ζ^θ‖²` where `ζ^θ = ∫ Φ(· - t) v_θ(t) dt` and the norm is
/// `∬ v_θ(s) Φ(s - t) v_θ(t) ds dt`.
pub fn theta_prime_oracle(
    v_builder: &(dyn Fn(&[f64]) -> Density + Sync),
    kernel: &MaternKernel,
    domain: &Domain,
    theta_box: &Domain,
    opts: &OracleOptions,
) -> Result<ThetaPrime> {
    opts.quadrature.validate()?;
    theta_box.validate()?;
    domain.validate()?;
    if domain.dim() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: domain.dim(),
        });
    }
    if opts.grid_points < 2 {
        return Err(Error::Config(
            "oracle grid_points must be at least 2".into(),
        ));
    }
    let rule = PairRule::new(kernel, domain, opts.quadrature, &opts.kinks);
    let norm = |theta: &[f64]| -> Result<f64> {
        let v = v_builder(theta);
        let val = rule.bilinear(v.as_ref(), v.as_ref());
        if val.is_finite() {
            Ok(val)
        } else {
            Err(Error::Numerical(format!(
                "norm quadrature at θ = {theta:?}"
            )))
        }
    };

    let p = theta_box.dim();
    let axes: Vec<Vec<f64>> = (0..p)
        .map(|k| linspace(theta_box.lower[k], theta_box.upper[k], opts.grid_points))
        .collect();
    let total = opts
        .grid_points
        .checked_pow(p as u32)
        .ok_or_else(|| Error::Config("oracle grid too large".into()))?;
    let grid_theta = |mut idx: usize| -> Vec<f64> {
        let mut th = vec![0.0; p];
        for k in (0..p).rev() {
            th[k] = axes[k][idx % opts.grid_points];
            idx /= opts.grid_points;
        }
        th
    };
    let norm_curve = (0..total)
        .into_par_iter()
        .map(|i| {
            let th = grid_theta(i);
            norm(&th).map(|v| (th, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let (best_theta, best_val) = norm_curve
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .expect("nonempty grid");
    let step: Vec<f64> = (0..p)
        .map(|k| (theta_box.upper[k] - theta_box.lower[k]) / (opts.grid_points - 1) as f64)
        .collect();
    let mut err = None;
    let mut guarded = |th: &[f64]| match norm(th) {
        Ok(v) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    };
    let (theta_prime, norm_sq) = if p == 1 {
        let lo = (best_theta[0] - step[0]).max(theta_box.lower[0]);
        let hi = (best_theta[0] + step[0]).min(theta_box.upper[0]);
        let r = golden_section(|t| guarded(&[t]), lo, hi, opts.tol);
        (vec![r.x], r.value)
    } else {
        let r = nelder_mead_box(
            &mut guarded,
            &best_theta,
            &theta_box.lower,
            &theta_box.upper,
            &step,
            opts.tol,
            20_000,
        );
        (r.x, r.value)
    };
    if let Some(e) = err {
        return Err(e);
    }
    let (theta_prime, norm_sq) = if norm_sq <= best_val {
        (theta_prime, norm_sq)
    } else {
        (best_theta, best_val)
    };

    let vertex = if opts.affine {
        affine_vertex(v_builder, &rule, p)
    } else {
        None
    };
    Ok(ThetaPrime {
        theta_prime,
        norm_sq: norm_sq.max(0.0),
        vertex,
        norm_curve,
    })
}

/// With `v_θ = v_0 + Σ θ_k u_k` the norm is `⟨v_0,v_0⟩ + 2 bᵀθ + θᵀGθ` where
/// `G_kl = ⟨u_k,u_l⟩` and `b_k = ⟨v_0,u_k⟩`, so the vertex is `-G⁻¹b`.
fn affine_vertex(
    v_builder: &(dyn Fn(&[f64]) -> Density + Sync),
    rule: &PairRule,
    p: usize,
) -> Option<Vec<f64>> {
    let v0 = v_builder(&vec![0.0; p]);
    let units: Vec<Density> = (0..p)
        .map(|k| {
            let mut e = vec![0.0; p];
            e[k] = 1.0;
            let vk = v_builder(&e);
            let v0 = v0.clone();
            Arc::new(move |t: &[f64]| vk(t) - v0(t)) as Density
        })
        .collect();
    let mut g = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    for k in 0..p {
        b[k] = rule.bilinear(v0.as_ref(), units[k].as_ref());
        for l in k..p {
            let val = rule.bilinear(units[k].as_ref(), units[l].as_ref());
            g[(k, l)] = val;
            g[(l, k)] = val;
        }
    }
    let sol = SpdFactor::new(g).ok()?.solve(&b);
    Some(sol.iter().map(|v| -v).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::krr::krr_fit;
    use approx::assert_abs_diff_eq;

    fn sym() -> Domain {
        Domain::interval(-1.0, 1.0).unwrap()
    }

    fn zero_sim() -> Arc<dyn Simulator> {
        Arc::new(FnSimulator::new("zero", 1, true, |_, _| 0.0))
    }

    fn problem(xs: &[f64], ys: &[f64], sim: Arc<dyn Simulator>, lambda: f64) -> CalibrationProblem {
        let d = Design::from_scalars(xs, sym()).unwrap();
        CalibrationProblem::new(
            Dataset::new(d, ys.to_vec()).unwrap(),
            sim,
            MaternKernel::exponential(),
            lambda,
            Domain::interval(-2.0, 2.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_point_objective_and_parts() {
        let p = problem(&[0.0], &[1.0], zero_sim(), 1.0);
        assert_abs_diff_eq!(ko_objective(&p, &[0.3]).unwrap(), 0.5, epsilon = 1e-15);
        let d = ko_objective_decomposed(&p, &[0.3]).unwrap();
        assert_abs_diff_eq!(d.train_term, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(d.norm_term, 0.25, epsilon = 1e-15);
        assert_eq!(residual_vector(&p, &[0.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn zero_residual_gives_zero() {
        let sim: Arc<dyn Simulator> =
            Arc::new(FnSimulator::new("exact", 1, false, |x, _| x[0] * x[0]));
        let p = problem(&[-0.5, 0.2, 0.7], &[0.25, 0.04, 0.49], sim, 0.1);
        assert_abs_diff_eq!(ko_objective(&p, &[0.0]).unwrap(), 0.0, epsilon = 1e-15);
        let d = ko_objective_decomposed(&p, &[0.0]).unwrap();
        assert_abs_diff_eq!(d.total(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn matches_krr_decomposition() {
        let xs: Vec<f64> = (0..12).map(|i| -0.95 + 0.16 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin() + 0.3).collect();
        let sim: Arc<dyn Simulator> =
            Arc::new(FnSimulator::new("lin", 1, true, |x, t| t[0] * x[0]));
        let p = problem(&xs, &ys, sim, 0.05);
        let theta = [0.7];
        let obj = ko_objective(&p, &theta).unwrap();
        let r = residual_vector(&p, &theta).unwrap();
        let data = Dataset::new(p.physical.design().clone(), r.clone()).unwrap();
        let fit = krr_fit(&p.kernel, &data, p.lambda).unwrap();
        let n = xs.len() as f64;
        let train: f64 = xs
            .iter()
            .zip(&r)
            .map(|(x, ri)| (ri - fit.expansion().eval(&[*x])).powi(2))
            .sum::<f64>()
            / n;
        let pen = p.lambda * fit.expansion().norm_sq();
        assert!(((train + pen) - obj).abs() <= 1e-10 * obj);
        let d = ko_objective_decomposed(&p, &theta).unwrap();
        assert!((d.train_term - train).abs() <= 1e-10 * obj);
        assert!((d.norm_term - pen).abs() <= 1e-10 * obj);
    }

    #[test]
    fn affine_fast_path_matches_direct() {
        let xs: Vec<f64> = (0..9).map(|i| -0.9 + 0.2 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        let sim: Arc<dyn Simulator> =
            Arc::new(FnSimulator::new("aff", 1, true, |x, t| 1.0 + t[0] * x[0]));
        let p = problem(&xs, &ys, sim, 0.01);
        let prep = p.prepare().unwrap();
        let obj = prep.bind(p.physical.y()).unwrap();
        for th in [-2.0, -0.3, 0.0, 1.1, 2.0] {
            let a = obj.value(&[th]).unwrap();
            let b = obj.value_direct(&[th]).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
    }

    #[test]
    fn recovers_exact_parameter() {
        let xs: Vec<f64> = (0..15).map(|i| -1.0 + i as f64 / 7.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (0.4 * x).sin() + 0.437 * x * x).collect();
        let sim: Arc<dyn Simulator> = Arc::new(FnSimulator::new("quad", 1, false, |x, t| {
            (0.4 * x[0]).sin() + t[0] * x[0] * x[0]
        }));
        let p = problem(&xs, &ys, sim, 0.01);
        let est = estimate_theta(&p).unwrap();
        assert_abs_diff_eq!(est.theta_hat[0], 0.437, epsilon = 1e-6);
        assert!(est.trace.refined_value <= est.trace.grid_value);
    }

    #[test]
    fn symmetric_objective_is_minimized_at_center() {
        let t0 = 0.3137;
        let g = |x: f64| 1.0 + x * x;
        let sim: Arc<dyn Simulator> = Arc::new(FnSimulator::new("sym", 1, false, move |x, t| {
            (t[0] - t0).powi(2) * g(x[0])
        }));
        let xs = [-0.8, -0.1, 0.4, 0.9];
        let ys: Vec<f64> = xs.iter().map(|x| -g(*x)).collect();
        let p = problem(&xs, &ys, sim, 0.1);
        let est = estimate_theta(&p).unwrap();
        assert_abs_diff_eq!(est.theta_hat[0], t0, epsilon = 1e-6);
    }

    #[test]
    fn normal_equations_for_affine_simulators() {
        let xs: Vec<f64> = (0..20).map(|i| -0.95 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.8 * x + 0.1 * (5.0 * x).cos()).collect();
        let sim: Arc<dyn Simulator> =
            Arc::new(FnSimulator::new("lin", 1, true, |x, t| t[0] * x[0]));
        let p = problem(&xs, &ys, sim, 0.02);
        let est = estimate_theta(&p).unwrap();
        let (th, v) = est.trace.normal_equations.clone().unwrap();
        assert!(v <= est.trace.refined_value + 1e-14);
        assert_abs_diff_eq!(th[0], est.trace.refined_theta[0], epsilon = 1e-6);
    }

    #[test]
    fn flat_objective_breaks_ties_lexicographically() {
        let p = problem(&[0.0, 0.5], &[1.0, -1.0], zero_sim(), 1.0);
        let prep = p.prepare().unwrap();
        let obj = prep.bind(p.physical.y()).unwrap();
        let opts = EstimateOptions {
            grid_points: 11,
            ..Default::default()
        };
        let est = estimate_theta_with(&obj, &opts).unwrap();
        assert_eq!(est.trace.ties.len(), 11);
        assert_eq!(est.trace.refined_theta, vec![-2.0]);
    }

    #[test]
    fn two_parameter_estimate() {
        let xs: Vec<f64> = (0..25).map(|i| -1.0 + i as f64 / 12.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.3 + 1.2 * x.powi(3)).collect();
        let sim: Arc<dyn Simulator> = Arc::new(FnSimulator::new("cubic", 2, false, |x, t| {
            t[0] + t[1] * x[0].powi(3)
        }));
        let d = Design::from_scalars(&xs, sym()).unwrap();
        let p = CalibrationProblem::new(
            Dataset::new(d, ys).unwrap(),
            sim,
            MaternKernel::exponential(),
            0.01,
            Domain::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let prep = p.prepare().unwrap();
        let obj = prep.bind(p.physical.y()).unwrap();
        let est = estimate_theta_with(
            &obj,
            &EstimateOptions {
                grid_points: 21,
                ..Default::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(est.theta_hat[0], 0.3, epsilon = 1e-5);
        assert_abs_diff_eq!(est.theta_hat[1], 1.2, epsilon = 1e-5);
    }

    #[test]
    fn theta_box_is_enforced() {
        let p = problem(&[0.0], &[1.0], zero_sim(), 1.0);
        assert!(ko_objective(&p, &[5.0]).is_err());
    }

    #[test]
    fn oracle_finds_zero_of_scaled_density() {
        let a = 0.35;
        let builder = move |th: &[f64]| -> Density {
            let s = th[0] - a;
            Arc::new(move |t: &[f64]| s * (1.0 + t[0] * t[0]))
        };
        let opts = OracleOptions {
            grid_points: 41,
            quadrature: QuadratureConfig {
                nodes: 16,
                panels: 4,
            },
            affine: true,
            ..Default::default()
        };
        let r = theta_prime_oracle(
            &builder,
            &MaternKernel::exponential(),
            &sym(),
            &Domain::interval(-1.0, 1.0).unwrap(),
            &opts,
        )
        .unwrap();
        assert_abs_diff_eq!(r.theta_prime[0], a, epsilon = 1e-6);
        assert_abs_diff_eq!(r.vertex.unwrap()[0], a, epsilon = 1e-12);
        assert_eq!(r.norm_curve.len(), 41);
    }
}
