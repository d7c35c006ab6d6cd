//! Standard normal quantiles and the confidence multiplier `β_δ`.

use crate::error::{Error, Result};

// Acklam's rational approximation, |relative error| < 1.15e-9 before refinement.
const A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

const P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal CDF for `p ∈ (0, 1)`.
///
/// One Halley step on top of the rational approximation brings the result
/// to full double precision.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p.is_nan() {
        return f64::NAN;
    }
    let x = acklam(p);
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

/// `β_δ = Φ⁻¹((1 + δ)/2)`, the two-sided multiplier for confidence `δ`.
pub fn beta_delta(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {delta} outside (0, 1)"
        )));
    }
    Ok(inverse_normal_cdf(0.5 * (1.0 + delta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::erf::erfc;

    fn phi(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if phi(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn small_delta_gives_small_beta() {
        assert!(beta_delta(1e-12).unwrap().abs() < 1e-11);
        assert_eq!(inverse_normal_cdf(0.5), 0.0);
    }

    #[test]
    fn beta_090_against_bisection() {
        let b = beta_delta(0.9).unwrap();
        let oracle = bisect_quantile(0.95);
        assert!((b - oracle).abs() < 1e-9, "{b} vs {oracle}");
        assert!((b - 1.6449).abs() < 1e-4);
    }

    #[test]
    fn rejects_out_of_range() {
        for d in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(beta_delta(d).is_err());
        }
    }

    #[test]
    fn tails_match_bisection() {
        for p in [1e-10, 1e-5, 0.01, 0.02425, 0.3, 0.97575, 0.999, 1.0 - 1e-9] {
            let x = inverse_normal_cdf(p);
            let oracle = bisect_quantile(p);
            assert!(
                (x - oracle).abs() < 1e-8 * oracle.abs().max(1.0),
                "p={p}: {x} vs {oracle}"
            );
        }
    }

    proptest! {
        #[test]
        fn forward_round_trip(delta in 1e-6f64..0.999_999) {
            let b = beta_delta(delta).unwrap();
            prop_assert!((phi(b) - 0.5 * (1.0 + delta)).abs() <= 1e-9);
        }

        #[test]
        fn monotone_in_delta(a in 0.001f64..0.998, step in 1e-4f64..0.001) {
            prop_assert!(beta_delta(a).unwrap() < beta_delta(a + step).unwrap());
        }
    }
}
