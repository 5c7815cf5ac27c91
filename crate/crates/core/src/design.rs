//! Designs on axis-aligned boxes and their space-filling diagnostics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sobol::SobolSequence;

/// Default size of the candidate lattice used for fill distance when d ≥ 2.
pub const DEFAULT_FILL_LATTICE: usize = 1_000_000;

/// Closed box `Π [lower_k, upper_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let d = Self { lower, upper };
        d.validate()?;
        Ok(d)
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.is_empty() || self.lower.len() != self.upper.len() {
            return Err(Error::Design(format!(
                "domain bounds must be nonempty and of equal length ({} vs {})",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Design(format!("invalid domain axis [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| hi - lo)
            .product()
    }

    /// Affine image of a unit-cube point.
    pub fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (lo, hi))| lo + (hi - lo) * t)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    points: Vec<Vec<f64>>,
    domain: Domain,
}

impl Design {
    pub fn new(points: Vec<Vec<f64>>, domain: Domain) -> Result<Self> {
        domain.validate()?;
        if points.is_empty() {
            return Err(Error::Design(
                "design must contain at least one point".into(),
            ));
        }
        for p in &points {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("design point {p:?}")));
            }
            if !domain.contains(p) {
                return Err(Error::Design(format!(
                    "point {p:?} lies outside the domain"
                )));
            }
        }
        Ok(Self { points, domain })
    }

    /// One-dimensional design from scalars.
    pub fn from_scalars(xs: &[f64], domain: Domain) -> Result<Self> {
        Self::new(xs.iter().map(|&x| vec![x]).collect(), domain)
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// First `n` points, same domain.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        Self::new(
            self.points[..n.min(self.len())].to_vec(),
            self.domain.clone(),
        )
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_records(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_records<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|k| format!("x_{k}")).collect();
        w.write_record(&header)?;
        for p in &self.points {
            w.write_record(p.iter().map(|v| fmt_f64(*v)))?;
        }
        Ok(())
    }

    /// Reads a design CSV (header `x_1..x_d`, one point per row).
    pub fn read_csv<P: AsRef<Path>>(path: P, domain: Domain) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut points = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let p = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Design(format!("bad number {s:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            if p.len() != domain.dim() {
                return Err(Error::DimensionMismatch {
                    expected: domain.dim(),
                    got: p.len(),
                });
            }
            points.push(p);
        }
        Self::new(points, domain)
    }
}

/// Full-precision float formatting shared by every CSV writer (17 significant digits).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// First `n` points (indices 1..=n) of the Sobol sequence mapped onto `domain`.
pub fn sobol_design(n: usize, domain: &Domain) -> Result<Design> {
    if n == 0 {
        return Err(Error::Design("Sobol design needs n >= 1".into()));
    }
    domain.validate()?;
    let seq = SobolSequence::new(domain.dim())?;
    let points = (1..=n as u64)
        .map(|i| domain.map_unit(&seq.point(i)))
        .collect();
    Design::new(points, domain.clone())
}

/// Fill distance with an error bound (zero when exact).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FillDistance {
    pub value: f64,
    pub error_bound: f64,
}

pub fn fill_distance(design: &Design) -> FillDistance {
    fill_distance_with(design, DEFAULT_FILL_LATTICE)
}

/// Exact sorted-gap formula in one dimension; otherwise the maximum over a
/// candidate lattice of about `lattice_points` nodes, with half the lattice cell
/// diagonal as the error bound.
pub fn fill_distance_with(design: &Design, lattice_points: usize) -> FillDistance {
    let dom = design.domain();
    if design.dim() == 1 {
        let mut xs: Vec<f64> = design.points().iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        let mut h = (xs[0] - dom.lower[0]).max(dom.upper[0] - xs[xs.len() - 1]);
        for w in xs.windows(2) {
            h = h.max(0.5 * (w[1] - w[0]));
        }
        return FillDistance {
            value: h,
            error_bound: 0.0,
        };
    }

    let d = design.dim();
    let per_axis = ((lattice_points.max(2) as f64).powf(1.0 / d as f64).ceil() as usize).max(2);
    let total = per_axis.pow(d as u32);
    let steps: Vec<f64> = (0..d)
        .map(|k| (dom.upper[k] - dom.lower[k]) / (per_axis - 1) as f64)
        .collect();
    let value = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut x = vec![0.0; d];
            for k in 0..d {
                x[k] = dom.lower[k] + steps[k] * (idx % per_axis) as f64;
                idx /= per_axis;
            }
            design
                .points()
                .iter()
                .map(|p| dist2(p, &x))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
        .sqrt();
    let error_bound = 0.5 * steps.iter().map(|s| s * s).sum::<f64>().sqrt();
    FillDistance { value, error_bound }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Minimum pairwise Euclidean distance.
pub fn separation_distance(design: &Design) -> Result<f64> {
    let n = design.len();
    if n < 2 {
        return Err(Error::Design(
            "separation distance needs at least two points".into(),
        ));
    }
    if design.dim() == 1 {
        let mut xs: Vec<f64> = design.points().iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        return Ok(xs
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min));
    }
    let pts = design.points();
    let q2 = (0..n)
        .into_par_iter()
        .map(|i| {
            ((i + 1)..n)
                .map(|j| dist2(&pts[i], &pts[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| f64::INFINITY, f64::min);
    Ok(q2.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuasiUniformityReport {
    pub n: usize,
    /// fill distance h_n
    pub fill: f64,
    pub fill_error_bound: f64,
    /// separation distance q_n
    pub separation: f64,
    /// h_n / q_n
    pub ratio: f64,
    /// h_n · n^(1/d), bounded along a quasi-uniform sequence
    pub scaled_fill: f64,
}

pub fn quasi_uniformity_report(design: &Design) -> Result<QuasiUniformityReport> {
    quasi_uniformity_report_with(design, DEFAULT_FILL_LATTICE)
}

pub fn quasi_uniformity_report_with(
    design: &Design,
    lattice_points: usize,
) -> Result<QuasiUniformityReport> {
    let q = separation_distance(design)?;
    let h = fill_distance_with(design, lattice_points);
    let n = design.len();
    Ok(QuasiUniformityReport {
        n,
        fill: h.value,
        fill_error_bound: h.error_bound,
        separation: q,
        ratio: h.value / q,
        scaled_fill: h.value * (n as f64).powf(1.0 / design.dim() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> Domain {
        Domain::interval(0.0, 1.0).unwrap()
    }

    fn sym() -> Domain {
        Domain::interval(-1.0, 1.0).unwrap()
    }

    fn grid(n: usize) -> Design {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        Design::from_scalars(&xs, unit()).unwrap()
    }

    #[test]
    fn sobol_small_designs() {
        let d = sobol_design(3, &unit()).unwrap();
        assert_eq!(d.points(), &[vec![0.5], vec![0.25], vec![0.75]]);
        let d = sobol_design(3, &sym()).unwrap();
        assert_eq!(d.points(), &[vec![0.0], vec![-0.5], vec![0.5]]);
        assert!(sobol_design(0, &sym()).is_err());
        let big = Domain::new(vec![0.0; 11], vec![1.0; 11]).unwrap();
        assert!(sobol_design(4, &big).is_err());
    }

    #[test]
    fn three_point_design() {
        let d = Design::from_scalars(&[-1.0, 0.0, 1.0], sym()).unwrap();
        assert_eq!(fill_distance(&d).value, 0.5);
        assert_eq!(separation_distance(&d).unwrap(), 1.0);
        let r = quasi_uniformity_report(&d).unwrap();
        assert_eq!((r.fill, r.separation, r.ratio), (0.5, 1.0, 0.5));
        assert_abs_diff_eq!(r.scaled_fill, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn single_point_fill() {
        let d = Design::from_scalars(&[0.0], sym()).unwrap();
        assert_eq!(fill_distance(&d).value, 1.0);
        assert!(separation_distance(&d).is_err());
    }

    #[test]
    fn grid_metrics() {
        for n in [2usize, 3, 5, 11, 101] {
            let d = grid(n);
            let h = fill_distance(&d).value;
            let q = separation_distance(&d).unwrap();
            assert_abs_diff_eq!(h, 1.0 / (2.0 * (n - 1) as f64), epsilon = 1e-15);
            assert_abs_diff_eq!(q, 1.0 / (n - 1) as f64, epsilon = 1e-15);
            assert_abs_diff_eq!(h / q, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn duplicated_point_has_zero_separation() {
        let d = Design::from_scalars(&[0.2, 0.2, 0.7], unit()).unwrap();
        assert_eq!(separation_distance(&d).unwrap(), 0.0);
    }

    #[test]
    fn rejects_points_outside_domain() {
        assert!(Design::from_scalars(&[1.5], unit()).is_err());
        assert!(Design::new(vec![], unit()).is_err());
        assert!(Domain::interval(1.0, 0.0).is_err());
    }

    #[test]
    fn lattice_fill_distance_in_two_dims() {
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let d = Design::new(vec![vec![0.5, 0.5]], dom).unwrap();
        let h = fill_distance_with(&d, 10_000);
        assert_abs_diff_eq!(h.value, 0.5f64.sqrt(), epsilon = 1e-12);
        assert!(h.error_bound < 0.01);
        let dom = Domain::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let d = Design::new(vec![vec![0.0, 0.0], vec![1.0, 1.0]], dom).unwrap();
        assert_abs_diff_eq!(
            separation_distance(&d).unwrap(),
            2f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let d = sobol_design(17, &sym()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let back = Design::read_csv(&path, sym()).unwrap();
        assert_eq!(back, d);
    }
}
