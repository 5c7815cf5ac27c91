//! Modified Bessel function of the second kind, `K_ν(z)`, for real order.
//!
//! Half-integer orders use the terminating closed form. Every other order is
//! reduced to `μ = ν - round(ν)` with `|μ| ≤ 1/2`, evaluated by Temme's series
//! for `z < 2` or Steed's continued fraction (CF2) for `z ≥ 2`, and lifted to
//! `ν` by forward recurrence, which is stable for `K`.

use std::f64::consts::PI;

use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
// Odd-index coefficients of the Taylor series of 1/Γ(1 + x) about 0.
const RGAMMA_C3: f64 = -0.042_002_635_034_095_2;
const RGAMMA_C5: f64 = -0.042_197_734_555_544_3;

const MAX_ITER: usize = 20_000;

/// `K_ν(z)` for `z > 0`. `K_{-ν} = K_ν`.
pub fn bessel_k(nu: f64, z: f64) -> Result<f64> {
    check_args(nu, z)?;
    let nu = nu.abs();
    let scaled = match half_integer_order(nu) {
        Some(p) => k_half_integer_scaled(p, z),
        None => k_scaled_general(nu, z),
    };
    Ok(scaled * (-z).exp())
}

/// `K_ν(z)` computed by the Temme/CF2 route for every order, including the
/// half-integers that [`bessel_k`] short-circuits.
pub fn bessel_k_general(nu: f64, z: f64) -> Result<f64> {
    check_args(nu, z)?;
    Ok(k_scaled_general(nu.abs(), z) * (-z).exp())
}

/// Exponentially scaled `e^z K_ν(z)`, general route. Caller guarantees `z > 0`.
pub(crate) fn k_scaled_general(nu: f64, z: f64) -> f64 {
    let nu = nu.abs();
    let n = (nu + 0.5).floor() as usize;
    let mu = nu - n as f64;

    let (k_mu, k_mu1) = if z < 2.0 {
        k_scaled_temme(mu, z)
    } else {
        k_scaled_cf2(mu, z)
    };

    let mut k_prev = k_mu;
    let mut k_cur = k_mu1;
    if n == 0 {
        return k_prev;
    }
    for i in 1..n {
        let k_next = 2.0 * (mu + i as f64) / z * k_cur + k_prev;
        k_prev = k_cur;
        k_cur = k_next;
    }
    k_cur
}

/// Scaled `e^z K_{p+1/2}(z)` from the terminating series.
pub(crate) fn k_half_integer_scaled(p: usize, z: f64) -> f64 {
    // (p+k)! / (k! (p-k)!) built incrementally.
    let mut coeff = 1.0;
    let mut sum = 1.0;
    let inv_2z = 1.0 / (2.0 * z);
    let mut pow = 1.0;
    for k in 1..=p {
        coeff *= ((p + k) * (p - k + 1)) as f64 / k as f64;
        pow *= inv_2z;
        sum += coeff * pow;
    }
    (PI / (2.0 * z)).sqrt() * sum
}

/// Returns `Some(p)` when `nu == p + 1/2` exactly.
pub(crate) fn half_integer_order(nu: f64) -> Option<usize> {
    let shifted = nu - 0.5;
    if shifted >= 0.0 && shifted.fract() == 0.0 && shifted < 1e6 {
        Some(shifted as usize)
    } else {
        None
    }
}

fn check_args(nu: f64, z: f64) -> Result<()> {
    if !nu.is_finite() {
        return Err(Error::NonFinite(format!("Bessel order {nu}")));
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "Bessel K argument must be positive and finite, got {z}"
        )));
    }
    Ok(())
}

/// Γ(1+μ), Γ(1-μ) and Temme's auxiliary quantities
/// g1 = (1/Γ(1-μ) - 1/Γ(1+μ)) / (2μ), g2 = (1/Γ(1-μ) + 1/Γ(1+μ)) / 2.
fn temme_gamma(mu: f64) -> (f64, f64, f64, f64) {
    let r_plus = 1.0 / gamma(1.0 + mu);
    let r_minus = 1.0 / gamma(1.0 - mu);
    let g2 = 0.5 * (r_minus + r_plus);
    let g1 = if mu.abs() < 1e-3 {
        // the difference quotient cancels catastrophically here
        let mu2 = mu * mu;
        -(EULER_GAMMA + RGAMMA_C3 * mu2 + RGAMMA_C5 * mu2 * mu2)
    } else {
        (r_minus - r_plus) / (2.0 * mu)
    };
    (1.0 / r_plus, 1.0 / r_minus, g1, g2)
}

/// Temme's series for `e^z K_μ(z)` and `e^z K_{μ+1}(z)`, `|μ| ≤ 1/2`, `z < 2`.
fn k_scaled_temme(mu: f64, z: f64) -> (f64, f64) {
    let half_z = 0.5 * z;
    let ln_half_z = half_z.ln();
    let half_z_mu = (mu * ln_half_z).exp();
    let pi_mu = PI * mu;
    let sigma = -mu * ln_half_z;
    let sinrat = if pi_mu.abs() < f64::EPSILON {
        1.0
    } else {
        pi_mu / pi_mu.sin()
    };
    let sinhrat = if sigma.abs() < f64::EPSILON {
        1.0
    } else {
        sigma.sinh() / sigma
    };

    let (gamma_1pmu, gamma_1mmu, g1, g2) = temme_gamma(mu);

    let mut fk = sinrat * (sigma.cosh() * g1 - sinhrat * ln_half_z * g2);
    let mut pk = 0.5 / half_z_mu * gamma_1pmu;
    let mut qk = 0.5 * half_z_mu * gamma_1mmu;
    let mut ck = 1.0;
    let mut sum0 = fk;
    let mut sum1 = pk;
    for k in 1..MAX_ITER {
        let kf = k as f64;
        fk = (kf * fk + pk + qk) / (kf * kf - mu * mu);
        ck *= half_z * half_z / kf;
        pk /= kf - mu;
        qk /= kf + mu;
        let hk = -kf * fk + pk;
        let del0 = ck * fk;
        let del1 = ck * hk;
        sum0 += del0;
        sum1 += del1;
        if del0.abs() < 0.5 * sum0.abs() * f64::EPSILON
            && del1.abs() < 0.5 * sum1.abs() * f64::EPSILON
        {
            break;
        }
    }
    let ez = z.exp();
    (sum0 * ez, sum1 * 2.0 / z * ez)
}

/// Steed's CF2 (Temme's variant) for `e^z K_μ(z)` and `e^z K_{μ+1}(z)`, `z ≥ 2`.
fn k_scaled_cf2(mu: f64, z: f64) -> (f64, f64) {
    let mut bi = 2.0 * (1.0 + z);
    let mut di = 1.0 / bi;
    let mut delhi = di;
    let mut hi = di;

    let mut qi = 0.0;
    let mut qip1 = 1.0;

    let mut ai = -(0.25 - mu * mu);
    let a1 = ai;
    let mut ci = -ai;
    let mut bqi = -ai;

    let mut s = 1.0 + bqi * delhi;

    for i in 2..=MAX_ITER {
        ai -= 2.0 * (i - 1) as f64;
        ci = -ai * ci / i as f64;
        let tmp = (qi - bi * qip1) / ai;
        qi = qip1;
        qip1 = tmp;
        bqi += ci * qip1;
        bi += 2.0;
        di = 1.0 / (bi + ai * di);
        delhi *= bi * di - 1.0;
        hi += delhi;
        let dels = bqi * delhi;
        s += dels;
        if (dels / s).abs() < f64::EPSILON {
            break;
        }
    }
    hi *= -a1;

    let k_mu = (PI / (2.0 * z)).sqrt() / s;
    let k_mu1 = k_mu * (mu + z + 0.5 - hi) / z;
    (k_mu, k_mu1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // (ν, z, K_ν(z)) from a 30-digit arbitrary-precision evaluation.
    const REFERENCE: &[(f64, f64, f64)] = &[
        (0.0, 1e-6, 13.931_442_073_626_42),
        (0.3, 1e-3, 14.406_547_529_041_03),
        (1.0, 1.0, 0.601_907_230_197_234_6),
        (2.25, 1.9, 0.367_187_755_185_166_7),
        (3.7, 5.0, 0.012_498_951_966_274_49),
        (10.0, 50.0, 9.150_988_209_987_996e-23),
    ];

    #[test]
    fn half_integer_closed_forms() {
        let e = std::f64::consts::E;
        assert_relative_eq!(
            bessel_k(0.5, 1.0).unwrap(),
            (PI / 2.0).sqrt() / e,
            max_relative = 1e-14
        );
        assert_relative_eq!(bessel_k(0.5, 1.0).unwrap(), 0.4610685, epsilon = 1e-7);
        let expected = (PI / 4.0).sqrt() * (-2.0f64).exp() * 1.5;
        assert_relative_eq!(bessel_k(1.5, 2.0).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(bessel_k(1.5, 2.0).unwrap(), 0.1799066, epsilon = 1e-7);
    }

    #[test]
    fn reflection_symmetry() {
        assert_eq!(bessel_k(0.5, 3.0).unwrap(), bessel_k(-0.5, 3.0).unwrap());
        assert_eq!(bessel_k(2.3, 0.7).unwrap(), bessel_k(-2.3, 0.7).unwrap());
    }

    #[test]
    fn general_route_matches_reference_values() {
        for &(nu, z, want) in REFERENCE {
            let got = bessel_k_general(nu, z).unwrap();
            assert_relative_eq!(got, want, max_relative = 1e-10);
        }
    }

    #[test]
    fn general_route_matches_half_integer_forms() {
        for p in 0..6 {
            let nu = p as f64 + 0.5;
            for &z in &[1e-4, 0.3, 1.99, 2.0, 4.5, 30.0] {
                let closed = k_half_integer_scaled(p, z) * (-z).exp();
                let general = bessel_k_general(nu, z).unwrap();
                assert_relative_eq!(general, closed, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_nonpositive_argument() {
        assert!(bessel_k(1.0, 0.0).is_err());
        assert!(bessel_k(1.0, -1.0).is_err());
        assert!(bessel_k(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn detects_half_integers() {
        assert_eq!(half_integer_order(0.5), Some(0));
        assert_eq!(half_integer_order(2.5), Some(2));
        assert_eq!(half_integer_order(1.0), None);
        assert_eq!(half_integer_order(0.25), None);
    }
}
