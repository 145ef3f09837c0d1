//! Polynomial approximation of ReLU over the reals and the integer-coefficient
//! theory that motivates `x^2 + a*x` as a field-friendly activation.

mod integer;
mod poly;
mod remez;

pub use integer::{
    all_integer, check_approx_unit_interval, check_interval_length, check_kernel_special_case,
    interpolate_deg2, interpolate_deg2_exact, relu, scaled_relu, scaled_relu_unit_samples,
    AlgebraicKernelSpecialCase, ApproximabilityVerdict, Reason, KERNEL_ALPHA_MAX,
};
pub use poly::{interpolate, Interval, Polynomial};
pub use remez::{relu_minimax_deg2, remez, remez_with, MinimaxResult, RemezOptions, DEFAULT_GRID};

use thiserror::Error;

/// Tolerance used when deciding whether a real coefficient is an integer.
pub const TOL_INT: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ApproxError {
    #[error("interval [{lo}, {hi}] is empty or not finite")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("half-width must be positive, got {0}")]
    NonPositiveHalfWidth(f64),
    #[error("interval length {len} is below 4; use the unit-interval or kernel checks")]
    IntervalTooShort { len: f64 },
    #[error("levelling system is singular at iteration {iteration}")]
    Singular { iteration: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("leading coefficient is zero")]
    ZeroLeadingCoefficient,
    #[error("no sample supplied for kernel point {0}")]
    MissingKernelSample(f64),
    #[error("activation parameter must be at least 1, got {0}")]
    InvalidActivationParameter(i64),
}

/// Rescales `p` so its leading coefficient equals `target_leading`.
///
/// With the degree-2 minimax polynomial on `[-a, a]` and target 1 this gives
/// `x^2 + a*x + a^2/8`.
pub fn scale_to_integer(p: &Polynomial, target_leading: f64) -> Result<Polynomial, ApproxError> {
    let lead = p.leading();
    if lead == 0.0 {
        return Err(ApproxError::ZeroLeadingCoefficient);
    }
    let mut scaled = p.scaled(target_leading / lead);
    let mut coeffs = scaled.coeffs().to_vec();
    *coeffs.last_mut().unwrap() = target_leading;
    scaled = Polynomial::new(coeffs).with_tol_int(p.tol_int());
    Ok(scaled)
}

/// The activation `x^2 + a*x`.
pub fn poly_activation(a: i64) -> Result<Polynomial, ApproxError> {
    if a < 1 {
        return Err(ApproxError::InvalidActivationParameter(a));
    }
    Ok(Polynomial::from_integers(&[0, a, 1]))
}
