use num_bigint::BigInt;
use num_traits::{Signed, Zero};

use super::quantize::QuantizedModel;
use super::QLayerSpec;

/// Worst-case magnitude of any value produced while running `qm` on inputs
/// with entries bounded by `input_max`, by interval propagation:
///
/// - dense / conv: `fan_in * max|w| * x_max + max|b|`
/// - `x^2 + c*x`: `x_max^2 + |c| * x_max` (plus the folded constant)
/// - sum pool: `area * x_max`
///
/// Any prime with `(p - 1) / 2 >= B` makes field and integer inference agree.
pub fn required_modulus_bound(qm: &QuantizedModel, input_max: &BigInt) -> BigInt {
    let mut x = input_max.abs();
    let mut overall = x.clone();
    for (i, layer) in qm.layers().iter().enumerate() {
        let in_shape = qm.shape_at(i);
        x = match *layer {
            QLayerSpec::Conv2d { .. } | QLayerSpec::Dense { .. } => {
                let p = qm.params()[i].as_ref().expect("parametrised layer");
                let fan_in: usize = p.weight_shape[1..].iter().product();
                let w_max = p.weight.iter().map(|w| w.unsigned_abs()).max().unwrap_or(0);
                let b_max = p
                    .bias
                    .iter()
                    .map(|b| b.abs())
                    .max()
                    .unwrap_or_else(BigInt::zero);
                &x * fan_in * w_max + b_max
            }
            QLayerSpec::Poly { .. } | QLayerSpec::Square => {
                let (c, k) = qm.activation_terms(i);
                &x * &x + c.abs() * &x + k.abs()
            }
            QLayerSpec::SumPool { window, .. } => &x * (window * window),
            QLayerSpec::GlobalSumPool => &x * (in_shape[1] * in_shape[2]),
            QLayerSpec::Flatten => x,
        };
        if x > overall {
            overall = x.clone();
        }
    }
    overall
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fieldnn::quantize::IntParams;
    use crate::fieldnn::QuantConfig;

    fn dense(w: Vec<i64>, extra: Vec<QLayerSpec>) -> QuantizedModel {
        let n = w.len();
        let mut layers = vec![QLayerSpec::Dense { out_dim: 1 }];
        let mut params = vec![Some(IntParams {
            weight_shape: vec![1, n],
            weight: w,
            bias: vec![BigInt::zero()],
        })];
        for l in extra {
            layers.push(l);
            params.push(None);
        }
        QuantizedModel::new(vec![n], layers, params, QuantConfig::uniform(1, 1)).unwrap()
    }

    #[test]
    fn interval_examples() {
        let qm = dense(vec![3, -3, 1, 2], vec![]);
        assert_eq!(
            required_modulus_bound(&qm, &BigInt::from(5)),
            BigInt::from(60)
        );
        let qm = dense(vec![3, -3, 1, 2], vec![QLayerSpec::Square]);
        assert_eq!(
            required_modulus_bound(&qm, &BigInt::from(5)),
            BigInt::from(3600)
        );
    }

    #[test]
    fn monotone_in_input_bound() {
        let qm = dense(vec![3, -1], vec![QLayerSpec::Poly { a: 1 }]);
        let mut last = BigInt::zero();
        for m in 0..50 {
            let b = required_modulus_bound(&qm, &BigInt::from(m));
            assert!(b >= last);
            last = b;
        }
    }
}
