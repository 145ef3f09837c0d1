//! Quantisation of trained models and exact inference over `F_p`.
//!
//! A quantised network carries integers at a per-layer scale `S`: an integer
//! `v` stands for the real `v / S`. Inputs enter at `S = s_x`, every dense or
//! convolution layer multiplies the scale by `s_w`, every polynomial
//! activation squares it, and a mean pool becomes a sum pool whose area is
//! folded into the scale. Nothing is ever divided or truncated, so the same
//! computation can run over unbounded integers ([`integer_forward`]) or in a
//! prime field ([`field_forward`]); the two agree whenever every intermediate
//! value fits the centred range of `p`, which [`required_modulus_bound`]
//! guarantees.

mod bound;
mod exec;
mod file;
mod quantize;

pub use bound::required_modulus_bound;
pub use exec::{auto_modulus, descale, field_forward, integer_forward, quantize_input};
pub use file::{
    load_quantized, quantized_from_json, quantized_to_json, save_quantized, QModelMeta,
    QMODEL_FORMAT_VERSION,
};
pub use quantize::{
    poly_activation_scaled, poly_activation_scaled_checked, quantize, round_scaled, IntParams,
    QuantizedModel,
};

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::FieldError;

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("layer {layer} ({name}) cannot be evaluated in a prime field")]
    FieldIncompatible { layer: usize, name: String },
    #[error("layer {layer}: weight {value} times scale {scale} does not fit in 64 bits")]
    WeightOverflow {
        layer: usize,
        value: f64,
        scale: u64,
    },
    #[error("invalid quantisation config: {0}")]
    Config(String),
    #[error("input has {got} values, model expects {want}")]
    InputSize { got: usize, want: usize },
    #[error("modulus {p} too small: values up to {bound} need p >= {needed}")]
    ModulusTooSmall {
        p: u64,
        bound: BigInt,
        needed: BigInt,
    },
    #[error("no prime below 2^63 covers the bound: p >= {needed} required")]
    NoModulus { needed: BigInt },
    #[error("value {value} exceeds the declared bound {bound}")]
    BoundExceeded { value: BigInt, bound: BigInt },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("quantised model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantConfig {
    /// Integer per real unit for weights, a power of two.
    pub weight_scale: u64,
    /// Integer per real unit for inputs in `[-1, 1]`, a power of two.
    pub input_scale: u64,
    /// The `a` of `x^2 + a*x`; must match the model's polynomial activations.
    pub activation_a: i64,
    /// Add `round(a^2 S^2 / 8)` to each polynomial activation, recovering the
    /// full minimax form `x^2 + a*x + a^2/8`.
    #[serde(default)]
    pub fold_minimax_constant: bool,
}

impl QuantConfig {
    pub fn new(weight_scale: u64, input_scale: u64, activation_a: i64) -> Self {
        Self {
            weight_scale,
            input_scale,
            activation_a,
            fold_minimax_constant: false,
        }
    }

    /// Both scales set to `scale`.
    pub fn uniform(scale: u64, activation_a: i64) -> Self {
        Self::new(scale, scale, activation_a)
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        for (name, s) in [
            ("weight_scale", self.weight_scale),
            ("input_scale", self.input_scale),
        ] {
            if !s.is_power_of_two() {
                return Err(QuantError::Config(format!(
                    "{name} = {s} is not a power of two"
                )));
            }
        }
        if self.activation_a < 1 {
            return Err(QuantError::Config(format!(
                "activation_a = {} must be at least 1",
                self.activation_a
            )));
        }
        Ok(())
    }
}

/// Layers a quantised model may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum QLayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        out_dim: usize,
    },
    /// Window sum. `from_mean` marks a converted mean pool, whose window area
    /// multiplies the scale.
    SumPool {
        window: usize,
        stride: usize,
        padding: usize,
        #[serde(default)]
        from_mean: bool,
    },
    GlobalSumPool,
    /// `x^2 + a*x` applied at the incoming scale.
    Poly {
        a: i64,
    },
    Square,
    Flatten,
}
