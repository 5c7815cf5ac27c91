//! Native-space algebra: finite kernel expansions, radial basis interpolation
//! and functions of the form `f(x) = ∫_Ω Φ(x - t) v(t) dt`.
//!
//! For such `f` the native-space inner product reduces to an L₂ pairing,
//! `⟨f, g⟩ = ⟨v, g⟩_{L₂(Ω)}`, which is what makes norms of integral-class
//! functions computable by quadrature.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::design::{Design, Domain};
use crate::error::{Error, Result};
use crate::kernel::{cross_kernel_matrix, kernel_matrix, MaternKernel};
use crate::linalg::SpdFactor;
use crate::quadrature::{compensated_sum, composite_rule, GaussLegendre, QuadratureConfig};

/// Default diagonal jitter for interpolation.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// `g(x) = Σ β_i Φ(x - x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelExpansion {
    kernel: MaternKernel,
    centers: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
}

impl KernelExpansion {
    pub fn new(kernel: MaternKernel, centers: Vec<Vec<f64>>, coeffs: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != coeffs.len() {
            return Err(Error::InvalidArgument(format!(
                "expansion needs equal, nonzero numbers of centers and coefficients ({} vs {})",
                centers.len(),
                coeffs.len()
            )));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != kernel.dim()) {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: c.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("expansion coefficient".into()));
        }
        Ok(Self {
            kernel,
            centers,
            coeffs,
        })
    }

    /// The kernel section `Φ(· - x)`.
    pub fn section(kernel: MaternKernel, x: Vec<f64>) -> Result<Self> {
        Self::new(kernel, vec![x], vec![1.0])
    }

    pub fn kernel(&self) -> &MaternKernel {
        &self.kernel
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.coeffs)
            .map(|(c, b)| b * self.kernel.eval_pair(x, c))
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        rkhs_inner_product(self, self).expect("an expansion shares its own kernel")
    }
}

/// `⟨g1, g2⟩ = Σ_i Σ_j β_i γ_j Φ(x_i - x'_j)`.
pub fn rkhs_inner_product(g1: &KernelExpansion, g2: &KernelExpansion) -> Result<f64> {
    if g1.kernel != g2.kernel {
        return Err(Error::KernelMismatch);
    }
    let cross = cross_kernel_matrix(&g1.kernel, &g1.centers, &g2.centers);
    let b = DVector::from_column_slice(&g1.coeffs);
    let c = DVector::from_column_slice(&g2.coeffs);
    Ok(b.dot(&(cross * c)))
}

/// Minimum-norm interpolant `s_{f,X}`: coefficients solve `(Φ + jitter·I) c = values`.
pub fn interpolate(
    kernel: &MaternKernel,
    design: &Design,
    values: &[f64],
    jitter: f64,
) -> Result<KernelExpansion> {
    if values.len() != design.len() {
        return Err(Error::DimensionMismatch {
            expected: design.len(),
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("interpolation value".into()));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "jitter must be >= 0, got {jitter}"
        )));
    }
    if design.dim() != kernel.dim() {
        return Err(Error::DimensionMismatch {
            expected: kernel.dim(),
            got: design.dim(),
        });
    }
    let factor = SpdFactor::shifted(kernel_matrix(kernel, design.points()), jitter)?;
    let c = factor.solve(&DVector::from_column_slice(values));
    KernelExpansion::new(
        *kernel,
        design.points().to_vec(),
        c.iter().copied().collect(),
    )
}

/// Density `v` of an integral-class function.
pub type Density = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `f(x) = ∫_Ω Φ(x - t) v(t) dt`.
#[derive(Clone)]
pub struct IntegralClassFunction {
    kernel: MaternKernel,
    density: Density,
    domain: Domain,
    quadrature: QuadratureConfig,
    gl: Arc<GaussLegendre>,
    /// Points in one dimension where `v` is not smooth; panels are split there.
    kinks: Vec<f64>,
}

impl fmt::Debug for IntegralClassFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegralClassFunction")
            .field("kernel", &self.kernel)
            .field("domain", &self.domain)
            .field("quadrature", &self.quadrature)
            .field("kinks", &self.kinks)
            .finish_non_exhaustive()
    }
}

impl IntegralClassFunction {
    pub fn new(kernel: MaternKernel, density: Density, domain: Domain) -> Result<Self> {
        domain.validate()?;
        if domain.dim() != kernel.dim() {
            return Err(Error::DimensionMismatch {
                expected: kernel.dim(),
                got: domain.dim(),
            });
        }
        Ok(Self {
            kernel,
            density,
            domain,
            quadrature: QuadratureConfig::default(),
            gl: Arc::new(GaussLegendre::new(QuadratureConfig::default().nodes)),
            kinks: Vec::new(),
        })
    }

    pub fn with_quadrature(mut self, quadrature: QuadratureConfig) -> Result<Self> {
        quadrature.validate()?;
        self.quadrature = quadrature;
        self.gl = Arc::new(GaussLegendre::new(quadrature.nodes));
        Ok(self)
    }

    pub fn with_kinks(mut self, kinks: Vec<f64>) -> Self {
        self.kinks = kinks;
        self
    }

    pub fn kernel(&self) -> &MaternKernel {
        &self.kernel
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn quadrature(&self) -> QuadratureConfig {
        self.quadrature
    }

    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    pub fn density(&self, t: &[f64]) -> f64 {
        (self.density)(t)
    }

    pub fn density_fn(&self) -> &Density {
        &self.density
    }

    /// Rule over Ω; in one dimension panels are split at the density's kinks
    /// and at `extra` breakpoints.
    fn rule(&self, extra: &[f64]) -> Vec<(Vec<f64>, f64)> {
        let gl = self.gl.as_ref();
        if self.domain.dim() == 1 {
            let mut bp = self.kinks.clone();
            bp.extend_from_slice(extra);
            return composite_rule(
                gl,
                self.domain.lower[0],
                self.domain.upper[0],
                self.quadrature.panels,
                &bp,
            )
            .into_iter()
            .map(|(x, w)| (vec![x], w))
            .collect();
        }
        tensor_rule(gl, &self.domain, self.quadrature.panels)
    }

    /// `f(x)` by composite Gauss–Legendre quadrature. Points outside Ω use the
    /// same integral.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain.dim(),
                got: x.len(),
            });
        }
        let extra: Vec<f64> = if x.len() == 1 { vec![x[0]] } else { vec![] };
        let rule = self.rule(&extra);
        let val = compensated_sum(
            rule.iter()
                .map(|(t, w)| w * self.kernel.eval_pair(x, t) * self.density(t)),
        );
        if !val.is_finite() {
            return Err(Error::Numerical(format!("non-finite quadrature at {x:?}")));
        }
        Ok(val)
    }

    /// `‖f‖² = ∬ v(s) Φ(s - t) v(t) ds dt`.
    pub fn rkhs_norm_sq_via_v(&self) -> f64 {
        let rule = PairRule::new(&self.kernel, &self.domain, self.quadrature, &self.kinks);
        rule.bilinear(self.density.as_ref(), self.density.as_ref())
            .max(0.0)
    }

    /// `⟨v, g⟩_{L₂(Ω)}` for a function `g` with kinks at `g_kinks` (one dimension).
    pub fn l2_pairing<G: Fn(&[f64]) -> f64>(&self, g: G, g_kinks: &[f64]) -> f64 {
        let rule = self.rule(g_kinks);
        compensated_sum(rule.iter().map(|(t, w)| w * self.density(t) * g(t)))
    }

    /// Native-space inner product with a kernel expansion, `⟨f, s⟩ = ⟨v, s⟩_{L₂}`.
    pub fn inner_with_expansion(&self, s: &KernelExpansion) -> Result<f64> {
        if *s.kernel() != self.kernel {
            return Err(Error::KernelMismatch);
        }
        let kinks: Vec<f64> = if self.domain.dim() == 1 {
            s.centers().iter().map(|c| c[0]).collect()
        } else {
            Vec::new()
        };
        Ok(self.l2_pairing(|t| s.eval(t), &kinks))
    }
}

fn tensor_rule(gl: &GaussLegendre, domain: &Domain, panels: usize) -> Vec<(Vec<f64>, f64)> {
    let axes: Vec<Vec<(f64, f64)>> = (0..domain.dim())
        .map(|k| composite_rule(gl, domain.lower[k], domain.upper[k], panels, &[]))
        .collect();
    let mut out = vec![(Vec::new(), 1.0)];
    for axis in &axes {
        let mut next = Vec::with_capacity(out.len() * axis.len());
        for (p, w) in &out {
            for (x, wx) in axis {
                let mut q = p.clone();
                q.push(*x);
                next.push((q, w * wx));
            }
        }
        out = next;
    }
    out
}

/// Product rule for `∬_{Ω×Ω} v(s) Φ(s - t) w(t) ds dt`.
///
/// In one dimension the kernel's kink along `s = t` is handled by splitting
/// each diagonal panel square into two triangles, each integrated by an
/// iterated Gauss–Legendre rule; off-diagonal panel pairs use tensor rules.
/// Each entry stores `(s, t, weight · Φ(s - t))`.
#[derive(Debug, Clone)]
pub struct PairRule {
    points: Vec<(Vec<f64>, Vec<f64>, f64)>,
}

impl PairRule {
    pub fn new(
        kernel: &MaternKernel,
        domain: &Domain,
        quadrature: QuadratureConfig,
        kinks: &[f64],
    ) -> Self {
        let gl = GaussLegendre::new(quadrature.nodes);
        let mut points = Vec::new();
        if domain.dim() == 1 {
            let edges = crate::quadrature::panel_edges(
                domain.lower[0],
                domain.upper[0],
                quadrature.panels,
                kinks,
            );
            let panels: Vec<(f64, f64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
            for (i, &(a, b)) in panels.iter().enumerate() {
                for (j, &(c, d)) in panels.iter().enumerate() {
                    if i != j {
                        for (s, ws) in gl.mapped(a, b) {
                            for (t, wt) in gl.mapped(c, d) {
                                let k = kernel.eval_radial(s - t);
                                points.push((vec![s], vec![t], ws * wt * k));
                            }
                        }
                    } else {
                        // lower triangle a <= t <= s <= b and its mirror
                        for (s, ws) in gl.mapped(a, b) {
                            for (t, wt) in gl.mapped(a, s) {
                                let k = kernel.eval_radial(s - t);
                                points.push((vec![s], vec![t], ws * wt * k));
                                points.push((vec![t], vec![s], ws * wt * k));
                            }
                        }
                    }
                }
            }
        } else {
            let rule = tensor_rule(&gl, domain, quadrature.panels);
            for (s, ws) in &rule {
                for (t, wt) in &rule {
                    let k = kernel.eval_pair(s, t);
                    points.push((s.clone(), t.clone(), ws * wt * k));
                }
            }
        }
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bilinear(&self, v: &dyn Fn(&[f64]) -> f64, w: &dyn Fn(&[f64]) -> f64) -> f64 {
        compensated_sum(self.points.iter().map(|(s, t, c)| c * v(s) * w(t)))
    }

    /// Gram-style evaluation for several densities at once: entry (a, b) is
    /// the bilinear form of `densities[a]` and `densities[b]`.
    pub fn gram(&self, densities: &[&dyn Fn(&[f64]) -> f64]) -> Vec<Vec<f64>> {
        let k = densities.len();
        let mut out = vec![vec![0.0; k]; k];
        for a in 0..k {
            for b in a..k {
                let val = self.bilinear(densities[a], densities[b]);
                out[a][b] = val;
                out[b][a] = val;
            }
        }
        out
    }
}
