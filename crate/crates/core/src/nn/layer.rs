use serde::{Deserialize, Serialize};

use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    ScaledRelu { c: i64 },
    Square,
    Poly { a: i64 },
}

impl ActivationKind {
    pub fn validate(self) -> Result<Self, NnError> {
        match self {
            ActivationKind::ScaledRelu { c } if c <= 0 || c % 2 != 0 => Err(NnError::InvalidLayer(
                format!("scaled ReLU needs a positive even c, got {c}"),
            )),
            ActivationKind::Poly { a } if a < 1 => Err(NnError::InvalidLayer(format!(
                "poly activation needs a >= 1, got {a}"
            ))),
            k => Ok(k),
        }
    }

    pub fn forward(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => x.max(0.0),
            ActivationKind::ScaledRelu { c } => (c as f64 * x).max(0.0),
            ActivationKind::Square => x * x,
            ActivationKind::Poly { a } => x * x + a as f64 * x,
        }
    }

    /// Derivative, with subgradient 0 at the ReLU kink.
    pub fn backward(self, x: f64) -> f64 {
        match self {
            ActivationKind::Relu => (x > 0.0) as u8 as f64,
            ActivationKind::ScaledRelu { c } => {
                if x > 0.0 {
                    c as f64
                } else {
                    0.0
                }
            }
            ActivationKind::Square => 2.0 * x,
            ActivationKind::Poly { a } => 2.0 * x + a as f64,
        }
    }

    /// Polynomial activations are the only ones computable in a prime field.
    pub fn is_field_compatible(self) -> bool {
        matches!(self, ActivationKind::Square | ActivationKind::Poly { .. })
    }

    pub fn is_piecewise_linear(self) -> bool {
        matches!(
            self,
            ActivationKind::Relu | ActivationKind::ScaledRelu { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense {
        out_dim: usize,
    },
    Pool {
        kind: PoolKind,
        window: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    GlobalAvgPool,
    Activation {
        activation: ActivationKind,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
}

impl LayerSpec {
    /// Stride-1 convolution that preserves spatial size for odd kernels.
    pub fn conv_same(out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv2d {
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
        }
    }

    pub fn dense(out_dim: usize) -> Self {
        LayerSpec::Dense { out_dim }
    }

    pub fn pool(kind: PoolKind, window: usize, stride: usize) -> Self {
        LayerSpec::Pool {
            kind,
            window,
            stride,
            padding: 0,
        }
    }

    pub fn act(activation: ActivationKind) -> Self {
        LayerSpec::Activation { activation }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    pub fn name(&self) -> String {
        match self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                ..
            } => {
                format!("conv{kernel}x{kernel}/{stride}->{out_channels}")
            }
            LayerSpec::Dense { out_dim } => format!("dense->{out_dim}"),
            LayerSpec::Pool {
                kind,
                window,
                stride,
                ..
            } => format!("{kind:?}-pool {window}x{window}/{stride}").to_lowercase(),
            LayerSpec::GlobalAvgPool => "global-avg-pool".into(),
            LayerSpec::Activation { activation } => format!("{activation:?}").to_lowercase(),
            LayerSpec::Dropout { rate } => format!("dropout {rate}"),
            LayerSpec::Flatten => "flatten".into(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let bad = |msg: String| NnError::Shape { layer: index, msg };
        match *self {
            LayerSpec::Conv2d {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return Err(NnError::InvalidLayer(format!(
                        "layer {index}: zero conv dimension"
                    )));
                }
                let [_, h, w] = image_dims(input)
                    .ok_or_else(|| bad(format!("convolution expects (C, H, W), got {input:?}")))?;
                let oh = window_out(h, kernel, stride, padding)
                    .ok_or_else(|| bad(format!("kernel {kernel} larger than padded input {h}")))?;
                let ow = window_out(w, kernel, stride, padding)
                    .ok_or_else(|| bad(format!("kernel {kernel} larger than padded input {w}")))?;
                Ok(vec![out_channels, oh, ow])
            }
            LayerSpec::Dense { out_dim } => {
                if out_dim == 0 {
                    return Err(NnError::InvalidLayer(format!(
                        "layer {index}: zero dense width"
                    )));
                }
                if input.len() != 1 {
                    return Err(bad(format!("dense expects flat input, got {input:?}")));
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Pool {
                window,
                stride,
                padding,
                ..
            } => {
                if window == 0 || stride == 0 || padding >= window {
                    return Err(NnError::InvalidLayer(format!(
                        "layer {index}: bad pool geometry"
                    )));
                }
                let [c, h, w] = image_dims(input)
                    .ok_or_else(|| bad(format!("pooling expects (C, H, W), got {input:?}")))?;
                let oh = window_out(h, window, stride, padding)
                    .ok_or_else(|| bad(format!("window {window} larger than input {h}")))?;
                let ow = window_out(w, window, stride, padding)
                    .ok_or_else(|| bad(format!("window {window} larger than input {w}")))?;
                Ok(vec![c, oh, ow])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = image_dims(input).ok_or_else(|| {
                    bad(format!("global pooling expects (C, H, W), got {input:?}"))
                })?;
                Ok(vec![c])
            }
            LayerSpec::Activation { activation } => {
                activation.validate()?;
                Ok(input.to_vec())
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(NnError::InvalidLayer(format!(
                        "layer {index}: dropout rate {rate} outside [0, 1)"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn image_dims(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

pub(crate) fn window_out(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = n + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        let poly = ActivationKind::Poly { a: 1 };
        assert_eq!(poly.forward(2.0), 6.0);
        assert_eq!(poly.backward(2.0), 5.0);
        assert_eq!(ActivationKind::Square.forward(-3.0), 9.0);
        assert_eq!(ActivationKind::Square.backward(-3.0), -6.0);
        assert_eq!(ActivationKind::Relu.backward(-1.0), 0.0);
        assert_eq!(ActivationKind::Relu.backward(0.0), 0.0);
        assert_eq!(ActivationKind::ScaledRelu { c: 4 }.forward(0.5), 2.0);
        assert_eq!(ActivationKind::ScaledRelu { c: 4 }.backward(0.5), 4.0);
        for a in 1..10 {
            assert_eq!(ActivationKind::Poly { a }.forward(0.0), 0.0);
        }
    }

    #[test]
    fn activation_validation() {
        assert!(ActivationKind::ScaledRelu { c: 3 }.validate().is_err());
        assert!(ActivationKind::ScaledRelu { c: 2 }.validate().is_ok());
        assert!(ActivationKind::Poly { a: 0 }.validate().is_err());
    }

    #[test]
    fn shapes() {
        let conv = LayerSpec::conv_same(8, 3);
        assert_eq!(conv.output_shape(0, &[3, 32, 32]).unwrap(), vec![8, 32, 32]);
        let pool = LayerSpec::Pool {
            kind: PoolKind::Max,
            window: 3,
            stride: 2,
            padding: 1,
        };
        assert_eq!(pool.output_shape(0, &[4, 32, 32]).unwrap(), vec![4, 16, 16]);
        assert_eq!(
            LayerSpec::Flatten.output_shape(0, &[2, 3, 4]).unwrap(),
            vec![24]
        );
        assert!(matches!(
            LayerSpec::dense(3).output_shape(5, &[2, 3, 4]),
            Err(NnError::Shape { layer: 5, .. })
        ));
        assert!(LayerSpec::Dropout { rate: 1.0 }
            .output_shape(0, &[3])
            .is_err());
    }

    #[test]
    fn layer_json() {
        let l = LayerSpec::act(ActivationKind::Poly { a: 1 });
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(
            s,
            r#"{"type":"activation","activation":{"name":"poly","a":1}}"#
        );
        assert_eq!(serde_json::from_str::<LayerSpec>(&s).unwrap(), l);
    }
}
