use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

use super::bound::required_modulus_bound;
use super::quantize::QuantizedModel;
use super::{QLayerSpec, QuantError};
use crate::field::{next_prime, FieldElement, Modulus};

/// Ring the quantised network is evaluated in.
trait Ring {
    type V: Clone;
    fn zero(&self) -> Self::V;
    fn from_i64(&self, v: i64) -> Self::V;
    fn from_big(&self, v: &BigInt) -> Self::V;
    fn add(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul_add(&self, acc: &mut Self::V, a: &Self::V, b: &Self::V) {
        *acc = self.add(acc, &self.mul(a, b));
    }
}

struct Integers;

impl Ring for Integers {
    type V = BigInt;
    fn zero(&self) -> BigInt {
        BigInt::zero()
    }
    fn from_i64(&self, v: i64) -> BigInt {
        BigInt::from(v)
    }
    fn from_big(&self, v: &BigInt) -> BigInt {
        v.clone()
    }
    fn add(&self, a: &BigInt, b: &BigInt) -> BigInt {
        a + b
    }
    fn mul(&self, a: &BigInt, b: &BigInt) -> BigInt {
        a * b
    }
    fn mul_add(&self, acc: &mut BigInt, a: &BigInt, b: &BigInt) {
        *acc += a * b;
    }
}

struct Field(Modulus);

impl Ring for Field {
    type V = FieldElement;
    fn zero(&self) -> FieldElement {
        FieldElement::default()
    }
    fn from_i64(&self, v: i64) -> FieldElement {
        self.0.reduce_i128(v as i128)
    }
    fn from_big(&self, v: &BigInt) -> FieldElement {
        self.0.reduce_big(v)
    }
    fn add(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        self.0.add(*a, *b)
    }
    fn mul(&self, a: &FieldElement, b: &FieldElement) -> FieldElement {
        self.0.mul(*a, *b)
    }
}

fn run<R: Ring>(qm: &QuantizedModel, ring: &R, input: &[i64]) -> Vec<R::V> {
    let mut x: Vec<R::V> = input.iter().map(|&v| ring.from_i64(v)).collect();
    for (i, layer) in qm.layers().iter().enumerate() {
        let in_shape = qm.shape_at(i);
        let out_shape = qm.shape_at(i + 1);
        x = match *layer {
            QLayerSpec::Dense { out_dim } => {
                let p = qm.params()[i].as_ref().unwrap();
                let w: Vec<R::V> = p.weight.iter().map(|&v| ring.from_i64(v)).collect();
                let d = x.len();
                (0..out_dim)
                    .map(|o| {
                        let mut acc = ring.from_big(&p.bias[o]);
                        for (wi, xi) in w[o * d..(o + 1) * d].iter().zip(&x) {
                            ring.mul_add(&mut acc, wi, xi);
                        }
                        acc
                    })
                    .collect()
            }
            QLayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let p = qm.params()[i].as_ref().unwrap();
                let w: Vec<R::V> = p.weight.iter().map(|&v| ring.from_i64(v)).collect();
                let (c, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut out = Vec::with_capacity(out_channels * oh * ow);
                for o in 0..out_channels {
                    let bias = ring.from_big(&p.bias[o]);
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = bias.clone();
                            for ci in 0..c {
                                for ky in 0..kernel {
                                    let Some(y) = (oy * stride + ky).checked_sub(padding) else {
                                        continue;
                                    };
                                    if y >= h {
                                        continue;
                                    }
                                    for kx in 0..kernel {
                                        let Some(xx) = (ox * stride + kx).checked_sub(padding)
                                        else {
                                            continue;
                                        };
                                        if xx >= wd {
                                            continue;
                                        }
                                        let wi = &w[((o * c + ci) * kernel + ky) * kernel + kx];
                                        ring.mul_add(&mut acc, wi, &x[(ci * h + y) * wd + xx]);
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
                out
            }
            QLayerSpec::SumPool {
                window,
                stride,
                padding,
                ..
            } => {
                let (c, h, wd) = (in_shape[0], in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let mut out = Vec::with_capacity(c * oh * ow);
                for ci in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut acc = ring.zero();
                            for ky in 0..window {
                                for kx in 0..window {
                                    let y = (oy * stride + ky).checked_sub(padding);
                                    let xx = (ox * stride + kx).checked_sub(padding);
                                    if let (Some(y), Some(xx)) = (y, xx) {
                                        if y < h && xx < wd {
                                            acc = ring.add(&acc, &x[(ci * h + y) * wd + xx]);
                                        }
                                    }
                                }
                            }
                            out.push(acc);
                        }
                    }
                }
                out
            }
            QLayerSpec::GlobalSumPool => {
                let plane = in_shape[1] * in_shape[2];
                x.chunks(plane)
                    .map(|ch| ch.iter().fold(ring.zero(), |acc, v| ring.add(&acc, v)))
                    .collect()
            }
            QLayerSpec::Poly { .. } | QLayerSpec::Square => {
                let (c, k) = qm.activation_terms(i);
                let (c, k) = (ring.from_big(&c), ring.from_big(&k));
                x.iter()
                    .map(|v| {
                        // v * (v + c) + k
                        let t = ring.add(v, &c);
                        ring.add(&ring.mul(v, &t), &k)
                    })
                    .collect()
            }
            QLayerSpec::Flatten => x,
        };
    }
    x
}

fn check_input(qm: &QuantizedModel, input: &[i64]) -> Result<(), QuantError> {
    if input.len() != qm.input_len() {
        return Err(QuantError::InputSize {
            got: input.len(),
            want: qm.input_len(),
        });
    }
    Ok(())
}

/// Exact evaluation over the integers; the reference for [`field_forward`].
pub fn integer_forward(qm: &QuantizedModel, input: &[i64]) -> Result<Vec<BigInt>, QuantError> {
    check_input(qm, input)?;
    Ok(run(qm, &Integers, input))
}

/// Evaluation in `F_p` with centred decoding of the logits.
///
/// Refuses a modulus whose centred range cannot hold the worst-case
/// intermediate unless `allow_wrap` is set.
pub fn field_forward(
    qm: &QuantizedModel,
    input: &[i64],
    m: Modulus,
    allow_wrap: bool,
) -> Result<Vec<i64>, QuantError> {
    check_input(qm, input)?;
    if !allow_wrap {
        let input_max = input
            .iter()
            .map(|v| v.unsigned_abs())
            .max()
            .unwrap_or(0)
            .max(qm.quant_config().input_scale);
        let bound = if input_max == qm.quant_config().input_scale {
            qm.required_bound().clone()
        } else {
            required_modulus_bound(qm, &BigInt::from(input_max))
        };
        if BigInt::from(m.half()) < bound {
            return Err(QuantError::ModulusTooSmall {
                p: m.p(),
                needed: &bound * 2 + 1,
                bound,
            });
        }
    }
    Ok(run(qm, &Field(m), input)
        .into_iter()
        .map(|e| m.decode(e))
        .collect())
}

/// Smallest prime `p >= 2 * bound + 1`, found by deterministic trial upward.
pub fn auto_modulus(bound: &BigInt) -> Result<Modulus, QuantError> {
    let needed: BigInt = bound.abs() * 2 + 1;
    needed
        .to_u64()
        .and_then(next_prime)
        .map(|p| Modulus::new(p).expect("next_prime returns an odd prime below 2^63"))
        .ok_or(QuantError::NoModulus { needed })
}

/// Inputs in `[-1, 1]` to integers at the input scale (half away from zero).
pub fn quantize_input(x: &[f64], input_scale: u64) -> Vec<i64> {
    x.iter()
        .map(|&v| (v * input_scale as f64).round() as i64)
        .collect()
}

/// Integer logits divided by their scale.
pub fn descale(logits: &[BigInt], scale: &BigInt) -> Vec<f64> {
    // shift both down together so the ratio survives conversion to f64
    let shift = scale.bits().saturating_sub(60);
    let s = (scale >> shift).to_f64().unwrap();
    logits
        .iter()
        .map(|v| {
            let sign = if v.is_negative() { -1.0 } else { 1.0 };
            let mag = v.abs();
            let hi = (&mag >> shift).to_f64().unwrap_or(f64::INFINITY);
            sign * hi / s
        })
        .collect()
}
