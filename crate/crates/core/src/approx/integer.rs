//! Decision procedures for uniform approximability by polynomials with
//! integer coefficients.
//!
//! Three regimes are covered:
//! - intervals of length at least four, where only integer polynomials qualify;
//! - the unit interval `[-1, 1]`, decided by the values at `-1, 0, 1`;
//! - symmetric intervals `[-alpha, alpha]` with `sqrt(2) <= alpha <= 1.563`,
//!   decided by interpolation on the known algebraic kernel.
//!
//! Anything else is reported as [`Reason::Unknown`].

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::poly::{interpolate, Interval, Polynomial};
use super::{ApproxError, TOL_INT};

/// Upper end of the documented kernel range.
pub const KERNEL_ALPHA_MAX: f64 = 1.563;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    Ok,
    NotIntegerValued,
    ParityMismatch,
    IntervalTooLong,
    KernelInterpolantNotInteger,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproximabilityVerdict {
    pub approximable: bool,
    pub reason: Reason,
    pub witness: Option<String>,
}

impl ApproximabilityVerdict {
    fn ok(witness: impl Into<String>) -> Self {
        Self {
            approximable: true,
            reason: Reason::Ok,
            witness: Some(witness.into()),
        }
    }

    fn fail(reason: Reason, witness: impl Into<String>) -> Self {
        Self {
            approximable: false,
            reason,
            witness: Some(witness.into()),
        }
    }

    pub fn unknown(witness: impl Into<String>) -> Self {
        Self::fail(Reason::Unknown, witness)
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn scaled_relu(x: f64, c: f64) -> f64 {
    (c * x).max(0.0)
}

/// Degree-2 interpolant through `(-1, f_neg1)`, `(0, f_0)`, `(1, f_1)`.
pub fn interpolate_deg2(f_neg1: f64, f_0: f64, f_1: f64) -> Polynomial {
    Polynomial::new(vec![
        f_0,
        (f_1 - f_neg1) / 2.0,
        (f_1 + f_neg1 - 2.0 * f_0) / 2.0,
    ])
}

/// Exact rational counterpart of [`interpolate_deg2`]; coefficients in
/// ascending order, always three entries.
pub fn interpolate_deg2_exact(
    f_neg1: &BigRational,
    f_0: &BigRational,
    f_1: &BigRational,
) -> [BigRational; 3] {
    let two = BigRational::from_integer(BigInt::from(2));
    [
        f_0.clone(),
        (f_1 - f_neg1) / &two,
        (f_1 + f_neg1 - f_0 * &two) / &two,
    ]
}

fn is_integer(v: f64) -> bool {
    v.is_finite() && (v - v.round()).abs() <= TOL_INT
}

/// Unit-interval test on the samples `f(-1), f(0), f(1)`.
pub fn check_approx_unit_interval(f_neg1: f64, f_0: f64, f_1: f64) -> ApproximabilityVerdict {
    for (x, v) in [(-1, f_neg1), (0, f_0), (1, f_1)] {
        if !is_integer(v) {
            return ApproximabilityVerdict::fail(
                Reason::NotIntegerValued,
                format!("f({x}) = {v} is not an integer"),
            );
        }
    }
    let (lo, hi) = (f_neg1.round() as i128, f_1.round() as i128);
    if (lo - hi).rem_euclid(2) != 0 {
        return ApproximabilityVerdict::fail(
            Reason::ParityMismatch,
            format!("f(-1) = {lo} and f(1) = {hi} have different parity"),
        );
    }
    let q = interpolate_deg2(f_neg1, f_0, f_1);
    ApproximabilityVerdict::ok(format!("integer interpolant q(x) = {q}"))
}

/// Long-interval test: on an interval of length at least four only integer
/// polynomials are uniformly approximable.
pub fn check_interval_length(
    iv: Interval,
    f_is_integer_poly: bool,
) -> Result<ApproximabilityVerdict, ApproxError> {
    if iv.len() < 4.0 {
        return Err(ApproxError::IntervalTooShort { len: iv.len() });
    }
    Ok(if f_is_integer_poly {
        ApproximabilityVerdict::ok(format!(
            "f coincides with an integer polynomial on [{}, {}]",
            iv.lo, iv.hi
        ))
    } else {
        ApproximabilityVerdict::fail(
            Reason::IntervalTooLong,
            format!(
                "interval [{}, {}] has length {} >= 4 and f is not an integer polynomial there",
                iv.lo,
                iv.hi,
                iv.len()
            ),
        )
    })
}

/// Kernel point set for `[-alpha, alpha]`, only for the documented range.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraicKernelSpecialCase {
    points: Vec<f64>,
}

impl AlgebraicKernelSpecialCase {
    pub fn for_symmetric(alpha: f64) -> Option<Self> {
        let sqrt2 = std::f64::consts::SQRT_2;
        if !(sqrt2..=KERNEL_ALPHA_MAX).contains(&alpha) {
            return None;
        }
        let mut points = vec![0.0];
        for c in [1.0, sqrt2] {
            if c <= alpha {
                points.push(-c);
                points.push(c);
            }
        }
        points.sort_by(f64::total_cmp);
        Some(Self { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }
}

/// Interpolation test on the algebraic kernel of `[-alpha, alpha]`.
///
/// `f_samples` pairs each kernel point with the value of `f` there. Points are
/// matched within `1e-12`.
pub fn check_kernel_special_case(
    alpha: f64,
    f_samples: &[(f64, f64)],
) -> Result<ApproximabilityVerdict, ApproxError> {
    let Some(kernel) = AlgebraicKernelSpecialCase::for_symmetric(alpha) else {
        return Ok(ApproximabilityVerdict::unknown(format!(
            "alpha = {alpha} is outside the supported kernel range [sqrt(2), {KERNEL_ALPHA_MAX}]"
        )));
    };
    let nodes = kernel
        .points()
        .iter()
        .map(|&p| {
            f_samples
                .iter()
                .find(|(x, _)| (x - p).abs() <= 1e-12)
                .map(|&(_, y)| (p, y))
                .ok_or(ApproxError::MissingKernelSample(p))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let q = interpolate(&nodes).ok_or(ApproxError::Singular { iteration: 0 })?;
    Ok(if q.is_integer_poly() {
        ApproximabilityVerdict::ok(format!("kernel interpolant {q} has integer coefficients"))
    } else {
        let (k, c) = q
            .coeffs()
            .iter()
            .enumerate()
            .find(|(_, c)| !is_integer(**c))
            .map(|(k, c)| (k, *c))
            .unwrap();
        ApproximabilityVerdict::fail(
            Reason::KernelInterpolantNotInteger,
            format!("kernel interpolant coefficient of x^{k} is {c}"),
        )
    })
}

/// `true` when every exact coefficient is an integer.
pub fn all_integer(coeffs: &[BigRational]) -> bool {
    coeffs.iter().all(|c| c.denom().is_one())
}

/// Exact scaled-ReLU samples `(0, 0, c)` at `-1, 0, 1`.
pub fn scaled_relu_unit_samples(c: i64) -> [BigRational; 3] {
    let z = BigRational::zero();
    let cv = BigRational::from_integer(BigInt::from(c.max(0)));
    [BigRational::from_integer(BigInt::from((-c).max(0))), z, cv]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;

    #[test]
    fn interpolants() {
        assert_eq!(interpolate_deg2(0.0, 0.0, 2.0).coeffs(), &[0.0, 1.0, 1.0]);
        assert_eq!(interpolate_deg2(1.0, 0.0, 1.0).coeffs(), &[0.0, 0.0, 1.0]);
        assert_eq!(interpolate_deg2(0.0, 0.0, 1.0).coeffs(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn relu_variants() {
        assert_eq!(relu(-3.0), 0.0);
        assert_eq!(scaled_relu(1.0, 2.0), 2.0);
        assert_eq!(scaled_relu(-1.0, 2.0), 0.0);
    }

    #[test]
    fn unit_interval_verdicts() {
        let v = check_approx_unit_interval(0.0, 0.0, 1.0);
        assert!(!v.approximable);
        assert_eq!(v.reason, Reason::ParityMismatch);

        let v = check_approx_unit_interval(0.0, 0.0, 2.0);
        assert!(v.approximable);
        assert_eq!(v.reason, Reason::Ok);

        let v = check_approx_unit_interval(0.0, 0.5, 1.0);
        assert_eq!(v.reason, Reason::NotIntegerValued);
        assert!(v.witness.unwrap().contains("f(0)"));
    }

    #[test]
    fn negative_parity_values() {
        assert!(check_approx_unit_interval(-3.0, 0.0, 1.0).approximable);
        assert_eq!(
            check_approx_unit_interval(-2.0, 0.0, 1.0).reason,
            Reason::ParityMismatch
        );
    }

    #[test]
    fn long_interval() {
        let iv = Interval::new(-2.0, 2.0).unwrap();
        let v = check_interval_length(iv, false).unwrap();
        assert_eq!(v.reason, Reason::IntervalTooLong);
        assert!(check_interval_length(iv, true).unwrap().approximable);
        assert!(
            check_interval_length(Interval::new(0.0, 5.0).unwrap(), true)
                .unwrap()
                .approximable
        );
        assert!(matches!(
            check_interval_length(Interval::new(-1.0, 1.0).unwrap(), false),
            Err(ApproxError::IntervalTooShort { .. })
        ));
    }

    fn relu_samples(c: f64) -> Vec<(f64, f64)> {
        [-SQRT_2, -1.0, 0.0, 1.0, SQRT_2]
            .iter()
            .map(|&x| (x, scaled_relu(x, c)))
            .collect()
    }

    #[test]
    fn kernel_cases() {
        assert_eq!(
            AlgebraicKernelSpecialCase::for_symmetric(SQRT_2)
                .unwrap()
                .points(),
            &[-SQRT_2, -1.0, 0.0, 1.0, SQRT_2]
        );
        for c in [1.0, 2.0] {
            let v = check_kernel_special_case(SQRT_2, &relu_samples(c)).unwrap();
            assert!(!v.approximable);
            assert_eq!(v.reason, Reason::KernelInterpolantNotInteger);
        }
        let v = check_kernel_special_case(1.6, &[]).unwrap();
        assert_eq!(v.reason, Reason::Unknown);
        let v = check_kernel_special_case(1.2, &[]).unwrap();
        assert_eq!(v.reason, Reason::Unknown);
    }

    #[test]
    fn kernel_accepts_integer_polynomial() {
        let samples: Vec<_> = [-SQRT_2, -1.0, 0.0, 1.0, SQRT_2]
            .iter()
            .map(|&x| (x, x * x + x))
            .collect();
        assert!(
            check_kernel_special_case(1.5, &samples)
                .unwrap()
                .approximable
        );
    }

    #[test]
    fn kernel_missing_sample() {
        let mut samples = relu_samples(1.0);
        samples.remove(0);
        assert!(matches!(
            check_kernel_special_case(SQRT_2, &samples),
            Err(ApproxError::MissingKernelSample(_))
        ));
    }

    #[test]
    fn exact_interpolant_for_even_scaled_relu() {
        for c in (2..=20).step_by(2) {
            let [a, b, d] = scaled_relu_unit_samples(c);
            let q = interpolate_deg2_exact(&a, &b, &d);
            let half = BigRational::from_integer(BigInt::from(c / 2));
            assert_eq!(q, [BigRational::zero(), half.clone(), half]);
            assert!(all_integer(&q));
        }
    }
}
