//! Stationary Matérn kernels
//!
//! `Φ(x) = (2√ν φ‖x‖)^ν K_ν(2√ν φ‖x‖) / (Γ(ν) 2^(ν-1))`, with `Φ(0) = 1`.
//! Its native space is the Sobolev space of order `m = ν + d/2`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::bessel;
use crate::error::{Error, Result};

/// Arguments beyond this are treated as having an exactly zero kernel value.
const UNDERFLOW_ARG: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelConfig", into = "KernelConfig")]
pub struct MaternKernel {
    nu: f64,
    phi: f64,
    dim: usize,
}

/// Serialized form: `{"family": "matern", "nu": .., "phi": .., "dim": ..}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: String,
    pub nu: f64,
    pub phi: f64,
    pub dim: usize,
}

impl TryFrom<KernelConfig> for MaternKernel {
    type Error = Error;

    fn try_from(cfg: KernelConfig) -> Result<Self> {
        if cfg.family != "matern" {
            return Err(Error::InvalidKernel(format!(
                "unsupported kernel family {:?}",
                cfg.family
            )));
        }
        MaternKernel::new(cfg.nu, cfg.phi, cfg.dim)
    }
}

impl From<MaternKernel> for KernelConfig {
    fn from(k: MaternKernel) -> Self {
        KernelConfig {
            family: "matern".to_string(),
            nu: k.nu,
            phi: k.phi,
            dim: k.dim,
        }
    }
}

impl std::fmt::Display for MaternKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "matern(nu={}, phi={}, dim={})",
            self.nu, self.phi, self.dim
        )
    }
}

impl MaternKernel {
    pub fn new(nu: f64, phi: f64, dim: usize) -> Result<Self> {
        if !(nu > 0.0 && nu.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "nu must be positive, got {nu}"
            )));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::InvalidKernel(format!(
                "phi must be positive, got {phi}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidKernel("dim must be at least 1".into()));
        }
        Ok(Self { nu, phi, dim })
    }

    /// `Φ(x) = e^{-|x|}` on the real line: ν = 1/2 with φ = 2^{-1/2}.
    pub fn exponential() -> Self {
        Self {
            nu: 0.5,
            phi: std::f64::consts::FRAC_1_SQRT_2,
            dim: 1,
        }
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sobolev order of the native space, `m = ν + d/2`.
    pub fn sobolev_order(&self) -> f64 {
        self.nu + self.dim as f64 / 2.0
    }

    fn scaled_arg(&self, r: f64) -> f64 {
        2.0 * self.nu.sqrt() * self.phi * r
    }

    /// Kernel value at a lag vector.
    pub fn eval(&self, lag: &[f64]) -> Result<f64> {
        let r = self.lag_norm(lag)?;
        Ok(self.eval_radial(r))
    }

    /// Kernel value through the general Bessel route, even for half-integer ν.
    pub fn eval_general(&self, lag: &[f64]) -> Result<f64> {
        let r = self.lag_norm(lag)?;
        let z = self.scaled_arg(r);
        if z == 0.0 {
            return Ok(1.0);
        }
        if z > UNDERFLOW_ARG {
            return Ok(0.0);
        }
        Ok(self.scaled_bessel_to_kernel(z, bessel::k_scaled_general(self.nu, z)))
    }

    fn lag_norm(&self, lag: &[f64]) -> Result<f64> {
        if lag.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: lag.len(),
            });
        }
        if lag.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("kernel lag {lag:?}")));
        }
        Ok(lag.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Kernel value as a function of the Euclidean distance `r ≥ 0`.
    pub fn eval_radial(&self, r: f64) -> f64 {
        let z = self.scaled_arg(r.abs());
        if z == 0.0 {
            return 1.0;
        }
        if z > UNDERFLOW_ARG {
            return 0.0;
        }
        match bessel::half_integer_order(self.nu) {
            Some(p) => half_integer_matern(p, z),
            None => self.scaled_bessel_to_kernel(z, bessel::k_scaled_general(self.nu, z)),
        }
    }

    /// Distance between two points followed by [`Self::eval_radial`].
    pub fn eval_pair(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        self.eval_radial(r2.sqrt())
    }

    // z^ν K_ν(z) / (Γ(ν) 2^(ν-1)) from e^z K_ν(z), in log space.
    fn scaled_bessel_to_kernel(&self, z: f64, k_scaled: f64) -> f64 {
        let log_val = self.nu * z.ln() + k_scaled.ln()
            - z
            - ln_gamma(self.nu)
            - (self.nu - 1.0) * std::f64::consts::LN_2;
        log_val.exp().min(1.0)
    }

    /// Fourier transform of Φ under the normalization φ = 1/(2√ν):
    /// `C₀ (1 + ‖ω‖²)^(-m/2)` with `C₀ = 2^(d/2) Γ(ν + d/2) / Γ(ν)`.
    /// Intended as a diagnostic; the scale φ of `self` is not used.
    pub fn spectral_density(&self, omega: &[f64]) -> f64 {
        let d = self.dim as f64;
        let m = self.sobolev_order();
        let c0 = 2f64.powf(d / 2.0) * gamma(self.nu + d / 2.0) / gamma(self.nu);
        let w2: f64 = omega.iter().map(|w| w * w).sum();
        c0 * (1.0 + w2).powf(-m / 2.0)
    }
}

/// `e^{-z} p!/(2p)! Σ_{i=0}^{p} (p+i)! / (i! (p-i)!) (2z)^{p-i}` for ν = p + 1/2.
fn half_integer_matern(p: usize, z: f64) -> f64 {
    match p {
        0 => (-z).exp(),
        1 => (1.0 + z) * (-z).exp(),
        2 => (1.0 + z + z * z / 3.0) * (-z).exp(),
        _ => {
            let mut fact_ratio = 1.0; // p! / (2p)!
            for k in (p + 1)..=(2 * p) {
                fact_ratio /= k as f64;
            }
            let mut sum = 0.0;
            // term_i = (p+i)! / (i! (p-i)!), starting at i = 0 with p!/p! = 1
            let mut term = 1.0;
            for i in 0..=p {
                if i > 0 {
                    term *= ((p + i) * (p - i + 1)) as f64 / i as f64;
                }
                sum += term * (2.0 * z).powi((p - i) as i32);
            }
            (fact_ratio * sum * (-z).exp()).min(1.0)
        }
    }
}

/// Kernel matrix with entries `Φ(x_i - x_j)` over a list of points.
///
/// Rows are assembled in parallel; each entry is computed independently, so
/// the result does not depend on the thread count.
pub fn kernel_matrix(kernel: &MaternKernel, points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..=i)
                .map(|j| kernel.eval_pair(&points[i], &points[j]))
                .collect()
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Cross-kernel matrix `Φ(a_i - b_j)`.
pub fn cross_kernel_matrix(kernel: &MaternKernel, a: &[Vec<f64>], b: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel.eval_pair(&a[i], &b[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn value_at_zero_lag_is_one() {
        let k = MaternKernel::new(0.5, std::f64::consts::FRAC_1_SQRT_2, 1).unwrap();
        assert_eq!(k.eval(&[0.0]).unwrap(), 1.0);
        let k = MaternKernel::new(2.7, 1.3, 3).unwrap();
        assert_eq!(k.eval(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(k.eval_general(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn exponential_parameterization() {
        let k = MaternKernel::exponential();
        assert_abs_diff_eq!(k.eval(&[1.0]).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k.eval(&[1.0]).unwrap(), 0.3678794, epsilon = 1e-7);
    }

    #[test]
    fn nu_three_halves_against_closed_form() {
        let phi = 0.83;
        let k = MaternKernel::new(1.5, phi, 1).unwrap();
        for i in 0..20 {
            let x = -2.0 + 4.0 * i as f64 / 19.0;
            let z = 6f64.sqrt() * phi * x.abs();
            let want = (1.0 + z) * (-z).exp();
            assert_abs_diff_eq!(k.eval_general(&[x]).unwrap(), want, epsilon = 1e-12);
            assert_abs_diff_eq!(k.eval(&[x]).unwrap(), want, epsilon = 1e-15);
        }
    }

    #[test]
    fn higher_half_integer_series() {
        // ν = 7/2: e^{-z}(1 + z + 2z²/5 + z³/15)
        let k = MaternKernel::new(3.5, 0.4, 1).unwrap();
        for &x in &[0.1, 0.7, 2.0, 5.0] {
            let z = 2.0 * 3.5f64.sqrt() * 0.4 * x;
            let want = (-z).exp() * (1.0 + z + 2.0 * z * z / 5.0 + z * z * z / 15.0);
            assert_abs_diff_eq!(k.eval(&[x]).unwrap(), want, epsilon = 1e-14);
            assert_abs_diff_eq!(k.eval_general(&[x]).unwrap(), want, epsilon = 1e-12);
        }
    }

    #[test]
    fn underflow_returns_zero() {
        let k = MaternKernel::new(1.3, 1.0, 1).unwrap();
        assert_eq!(k.eval(&[1e4]).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(MaternKernel::new(0.0, 1.0, 1).is_err());
        assert!(MaternKernel::new(1.0, -1.0, 1).is_err());
        assert!(MaternKernel::new(1.0, 1.0, 0).is_err());
        let k = MaternKernel::exponential();
        assert!(k.eval(&[f64::NAN]).is_err());
        assert!(k.eval(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn kernel_matrix_examples() {
        let k = MaternKernel::exponential();
        let single = kernel_matrix(&k, &[vec![0.3]]);
        assert_eq!(single[(0, 0)], 1.0);
        let m = kernel_matrix(&k, &[vec![0.0], vec![1.0]]);
        assert_eq!(m[(0, 0)], 1.0);
        assert_eq!(m[(1, 1)], 1.0);
        assert_abs_diff_eq!(m[(0, 1)], (-1.0f64).exp(), epsilon = 1e-15);
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn spectral_density_examples() {
        let k = MaternKernel::new(0.5, 1.0, 1).unwrap();
        let c0 = (2.0 / std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(k.spectral_density(&[0.0]), c0, epsilon = 1e-14);
        assert_abs_diff_eq!(
            k.spectral_density(&[1.0]),
            1.0 / std::f64::consts::PI.sqrt(),
            epsilon = 1e-14
        );
        assert!(k.spectral_density(&[2.0]) < k.spectral_density(&[1.0]));
    }

    #[test]
    fn config_round_trip() {
        let k = MaternKernel::new(1.5, 0.25, 2).unwrap();
        let json = serde_json::to_string(&k).unwrap();
        assert!(json.contains("\"family\":\"matern\""));
        let back: MaternKernel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, k);
        let bad = r#"{"family":"gaussian","nu":1.0,"phi":1.0,"dim":1}"#;
        assert!(serde_json::from_str::<MaternKernel>(bad).is_err());
    }
}
