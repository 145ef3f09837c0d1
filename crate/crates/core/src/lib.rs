//! Polynomial activations for prime-field neural network inference.

pub mod approx;
pub mod data;
pub mod experiment;
pub mod field;
pub mod fieldnn;
pub mod fsutil;
pub mod nn;
