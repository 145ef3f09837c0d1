use num_bigint::BigInt;
use num_traits::{Float, Signed, ToPrimitive, Zero};

use super::bound::required_modulus_bound;
use super::{QLayerSpec, QuantConfig, QuantError};
use crate::field::Modulus;
use crate::nn::{ActivationKind, LayerSpec, Model, NnError, PoolKind};

/// Integer parameters of a dense or convolution layer. Weights are at scale
/// `s_w`; biases at the layer's output scale and may exceed 64 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct IntParams {
    pub weight_shape: Vec<usize>,
    pub weight: Vec<i64>,
    pub bias: Vec<BigInt>,
}

/// A network restricted to field-computable layers, with integer parameters
/// and the scale of every intermediate tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    input_shape: Vec<usize>,
    layers: Vec<QLayerSpec>,
    params: Vec<Option<IntParams>>,
    quant_config: QuantConfig,
    layer_scales: Vec<BigInt>,
    shapes: Vec<Vec<usize>>,
    required_bound: BigInt,
}

impl QLayerSpec {
    fn as_float_spec(&self) -> LayerSpec {
        match *self {
            QLayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            },
            QLayerSpec::Dense { out_dim } => LayerSpec::Dense { out_dim },
            QLayerSpec::SumPool {
                window,
                stride,
                padding,
                ..
            } => LayerSpec::Pool {
                kind: PoolKind::Sum,
                window,
                stride,
                padding,
            },
            QLayerSpec::GlobalSumPool => LayerSpec::GlobalAvgPool,
            QLayerSpec::Poly { a } => LayerSpec::act(ActivationKind::Poly { a }),
            QLayerSpec::Square => LayerSpec::act(ActivationKind::Square),
            QLayerSpec::Flatten => LayerSpec::Flatten,
        }
    }
}

fn shape_err(e: NnError) -> QuantError {
    QuantError::Format(e.to_string())
}

impl QuantizedModel {
    /// Checks shapes and derives the scale chain and the modulus bound for
    /// inputs bounded by `input_scale`.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<QLayerSpec>,
        params: Vec<Option<IntParams>>,
        quant_config: QuantConfig,
    ) -> Result<Self, QuantError> {
        quant_config.validate()?;
        if params.len() != layers.len() {
            return Err(QuantError::Format(format!(
                "{} parameter entries for {} layers",
                params.len(),
                layers.len()
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, l) in layers.iter().enumerate() {
            let next = l
                .as_float_spec()
                .output_shape(i, shapes.last().unwrap())
                .map_err(shape_err)?;
            shapes.push(next);
        }
        if shapes.last().unwrap().len() != 1 {
            return Err(QuantError::Format("final output must be flat".into()));
        }
        for (i, (l, p)) in layers.iter().zip(&params).enumerate() {
            let want = match *l {
                QLayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    ..
                } => Some((
                    vec![out_channels, shapes[i][0], kernel, kernel],
                    out_channels,
                )),
                QLayerSpec::Dense { out_dim } => Some((vec![out_dim, shapes[i][0]], out_dim)),
                _ => None,
            };
            let ok = match (&want, p) {
                (None, None) => true,
                (Some((ws, out)), Some(p)) => {
                    &p.weight_shape == ws
                        && p.weight.len() == ws.iter().product::<usize>()
                        && p.bias.len() == *out
                }
                _ => false,
            };
            if !ok {
                return Err(QuantError::Format(format!(
                    "layer {i}: parameter shape mismatch"
                )));
            }
        }

        let s_w = BigInt::from(quant_config.weight_scale);
        let mut layer_scales = vec![BigInt::from(quant_config.input_scale)];
        for (i, l) in layers.iter().enumerate() {
            let s = layer_scales.last().unwrap();
            let next = match *l {
                QLayerSpec::Conv2d { .. } | QLayerSpec::Dense { .. } => s * &s_w,
                QLayerSpec::Poly { .. } | QLayerSpec::Square => s * s,
                QLayerSpec::SumPool {
                    window,
                    from_mean: true,
                    ..
                } => s * (window * window),
                QLayerSpec::SumPool { .. } | QLayerSpec::Flatten => s.clone(),
                QLayerSpec::GlobalSumPool => s * (shapes[i][1] * shapes[i][2]),
            };
            layer_scales.push(next);
        }

        let mut qm = Self {
            input_shape,
            layers,
            params,
            quant_config,
            layer_scales,
            shapes,
            required_bound: BigInt::zero(),
        };
        qm.required_bound = required_modulus_bound(&qm, &BigInt::from(quant_config.input_scale));
        Ok(qm)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[QLayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Option<IntParams>] {
        &self.params
    }

    pub fn quant_config(&self) -> &QuantConfig {
        &self.quant_config
    }

    /// Scale entering layer `i`; the last entry is the scale of the logits.
    pub fn layer_scales(&self) -> &[BigInt] {
        &self.layer_scales
    }

    pub fn output_scale(&self) -> &BigInt {
        self.layer_scales.last().unwrap()
    }

    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    /// Worst-case magnitude of any intermediate for inputs bounded by the input scale.
    pub fn required_bound(&self) -> &BigInt {
        &self.required_bound
    }

    /// Whether the centred range of `m` holds every value the model can
    /// produce on inputs within the input scale.
    pub fn fits_modulus(&self, m: Modulus) -> bool {
        BigInt::from(m.half()) >= self.required_bound
    }

    /// Coefficient of `x` and constant term of the polynomial activation at layer `i`.
    pub(crate) fn activation_terms(&self, i: usize) -> (BigInt, BigInt) {
        let s = &self.layer_scales[i];
        match self.layers[i] {
            QLayerSpec::Poly { a } => {
                let constant = if self.quant_config.fold_minimax_constant {
                    minimax_constant(a, s)
                } else {
                    BigInt::zero()
                };
                (s * a, constant)
            }
            _ => (BigInt::zero(), BigInt::zero()),
        }
    }
}

/// `round(a^2 S^2 / 8)`, half away from zero.
fn minimax_constant(a: i64, s: &BigInt) -> BigInt {
    let num: BigInt = BigInt::from(a) * a * s * s;
    let eight = BigInt::from(8);
    let (q, r): (BigInt, BigInt) = (&num / &eight, &num % &eight);
    if r.abs() * 2 >= BigInt::from(8) {
        q + num.signum()
    } else {
        q
    }
}

/// `round(x * s)` computed exactly, half away from zero.
pub fn round_scaled(x: f64, s: &BigInt) -> BigInt {
    if x == 0.0 || !x.is_finite() {
        return BigInt::zero();
    }
    let (mantissa, exp, sign) = Float::integer_decode(x);
    let product = BigInt::from(mantissa) * s;
    let magnitude = if exp >= 0 {
        product << exp as usize
    } else {
        let k = (-exp) as usize;
        let q = &product >> k;
        let rem = &product - (&q << k);
        if rem * 2 >= BigInt::from(1) << k {
            q + 1
        } else {
            q
        }
    };
    if sign < 0 {
        -magnitude
    } else {
        magnitude
    }
}

/// `v^2 + a*S*v`: the integer image of `x^2 + a*x` for `v = x*S`, at scale `S^2`.
pub fn poly_activation_scaled(v: &BigInt, scale: &BigInt, a: i64) -> BigInt {
    v * v + scale * a * v
}

/// [`poly_activation_scaled`] with an overflow check against `bound`.
pub fn poly_activation_scaled_checked(
    v: &BigInt,
    scale: &BigInt,
    a: i64,
    bound: &BigInt,
) -> Result<BigInt, QuantError> {
    let out = poly_activation_scaled(v, scale, a);
    if out.abs() > *bound {
        return Err(QuantError::BoundExceeded {
            value: out,
            bound: bound.clone(),
        });
    }
    Ok(out)
}

/// Converts a trained float model. Dropout layers are dropped, mean and global
/// average pooling become sum pooling, and any ReLU or max pool is rejected.
pub fn quantize(model: &Model, qc: QuantConfig) -> Result<QuantizedModel, QuantError> {
    qc.validate()?;
    let s_w = BigInt::from(qc.weight_scale);
    let mut layers = Vec::new();
    let mut params = Vec::new();
    let mut scale = BigInt::from(qc.input_scale);
    for (i, layer) in model.layers.iter().enumerate() {
        let incompatible = || QuantError::FieldIncompatible {
            layer: i,
            name: layer.name(),
        };
        let q = match *layer {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => QLayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            },
            LayerSpec::Dense { out_dim } => QLayerSpec::Dense { out_dim },
            LayerSpec::Pool {
                kind: PoolKind::Max,
                ..
            } => return Err(incompatible()),
            LayerSpec::Pool {
                kind,
                window,
                stride,
                padding,
            } => QLayerSpec::SumPool {
                window,
                stride,
                padding,
                from_mean: kind == PoolKind::Mean,
            },
            LayerSpec::GlobalAvgPool => QLayerSpec::GlobalSumPool,
            LayerSpec::Activation { activation } => match activation {
                ActivationKind::Square => QLayerSpec::Square,
                ActivationKind::Poly { a } if a == qc.activation_a => QLayerSpec::Poly { a },
                ActivationKind::Poly { a } => {
                    return Err(QuantError::Config(format!(
                        "layer {i} uses a = {a} but the config says {}",
                        qc.activation_a
                    )))
                }
                ActivationKind::Relu | ActivationKind::ScaledRelu { .. } => {
                    return Err(incompatible())
                }
            },
            LayerSpec::Dropout { .. } => continue,
            LayerSpec::Flatten => QLayerSpec::Flatten,
        };
        let p = match (&q, &model.params[i]) {
            (QLayerSpec::Conv2d { .. } | QLayerSpec::Dense { .. }, Some(p)) => {
                let out_scale = &scale * &s_w;
                let weight = p
                    .weight
                    .data()
                    .iter()
                    .map(|&w| {
                        round_scaled(w, &s_w)
                            .to_i64()
                            .ok_or(QuantError::WeightOverflow {
                                layer: i,
                                value: w,
                                scale: qc.weight_scale,
                            })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                let bias = p
                    .bias
                    .data()
                    .iter()
                    .map(|&b| round_scaled(b, &out_scale))
                    .collect();
                Some(IntParams {
                    weight_shape: p.weight.shape().to_vec(),
                    weight,
                    bias,
                })
            }
            _ => None,
        };
        scale = match q {
            QLayerSpec::Conv2d { .. } | QLayerSpec::Dense { .. } => &scale * &s_w,
            QLayerSpec::Poly { .. } | QLayerSpec::Square => &scale * &scale,
            QLayerSpec::SumPool {
                window,
                from_mean: true,
                ..
            } => &scale * (window * window),
            QLayerSpec::GlobalSumPool => {
                let s = model.shape_at(i);
                &scale * (s[1] * s[2])
            }
            _ => scale,
        };
        layers.push(q);
        params.push(p);
    }
    QuantizedModel::new(model.input_shape.clone(), layers, params, qc)
}
