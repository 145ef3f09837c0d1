//! Quantised model files.
//!
//! ```json
//! {"format_version": 1, "modulus": 1000003, "quant_config": {...},
//!  "input_shape": [2], "layers": [...],
//!  "int_params": [{"weight_shape": [4, 2], "weight": "<b64>", "bias": "<b64>"}, null, ...],
//!  "layer_scales": ["256", ...], "required_bound": "123456"}
//! ```
//!
//! Integer arrays are base64 over 64-bit little-endian two's complement. A
//! bias vector with an entry outside 64 bits is written as `bias_wide`, a list
//! of decimal strings, instead of `bias`. Scales and the bound are decimal
//! strings because they routinely exceed 64 bits. `layer_scales` and
//! `required_bound` are recomputed on load and must match.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use super::quantize::{IntParams, QuantizedModel};
use super::{QLayerSpec, QuantConfig, QuantError};
use crate::field::Modulus;
use crate::fsutil::write_atomic;

pub const QMODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IntParamsFile {
    weight_shape: Vec<usize>,
    weight: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias_wide: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct QModelFile {
    format_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    modulus: Option<u64>,
    quant_config: QuantConfig,
    input_shape: Vec<usize>,
    layers: Vec<QLayerSpec>,
    int_params: Vec<Option<IntParamsFile>>,
    layer_scales: Vec<String>,
    required_bound: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_model: Option<String>,
}

fn encode_i64s(values: &[i64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode_i64s(text: &str) -> Result<Vec<i64>, QuantError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| QuantError::Format(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(QuantError::Format(
            "integer array is not a multiple of 8 bytes".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn parse_big(s: &str) -> Result<BigInt, QuantError> {
    s.parse()
        .map_err(|_| QuantError::Format(format!("not an integer: {s:?}")))
}

/// Extra metadata stored alongside a quantised model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QModelMeta {
    pub modulus: Option<Modulus>,
    pub source_model: Option<String>,
}

pub fn quantized_to_json(qm: &QuantizedModel, meta: &QModelMeta) -> String {
    let int_params = qm
        .params()
        .iter()
        .map(|p| {
            p.as_ref().map(|p| {
                let narrow: Option<Vec<i64>> = p.bias.iter().map(|b| b.to_i64()).collect();
                IntParamsFile {
                    weight_shape: p.weight_shape.clone(),
                    weight: encode_i64s(&p.weight),
                    bias: narrow.as_deref().map(encode_i64s),
                    bias_wide: narrow
                        .is_none()
                        .then(|| p.bias.iter().map(|b| b.to_string()).collect()),
                }
            })
        })
        .collect();
    let file = QModelFile {
        format_version: QMODEL_FORMAT_VERSION,
        modulus: meta.modulus.map(Modulus::p),
        quant_config: *qm.quant_config(),
        input_shape: qm.input_shape().to_vec(),
        layers: qm.layers().to_vec(),
        int_params,
        layer_scales: qm.layer_scales().iter().map(|s| s.to_string()).collect(),
        required_bound: qm.required_bound().to_string(),
        source_model: meta.source_model.clone(),
    };
    serde_json::to_string_pretty(&file).expect("quantised model serialises")
}

pub fn quantized_from_json(text: &str) -> Result<(QuantizedModel, QModelMeta), QuantError> {
    let file: QModelFile =
        serde_json::from_str(text).map_err(|e| QuantError::Format(e.to_string()))?;
    if file.format_version != QMODEL_FORMAT_VERSION {
        return Err(QuantError::Format(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let params = file
        .int_params
        .into_iter()
        .map(|p| {
            p.map(|p| {
                let bias = match (p.bias, p.bias_wide) {
                    (Some(b), None) => decode_i64s(&b)?.into_iter().map(BigInt::from).collect(),
                    (None, Some(w)) => w.iter().map(|s| parse_big(s)).collect::<Result<_, _>>()?,
                    _ => {
                        return Err(QuantError::Format(
                            "exactly one of bias and bias_wide is required".into(),
                        ))
                    }
                };
                Ok(IntParams {
                    weight_shape: p.weight_shape,
                    weight: decode_i64s(&p.weight)?,
                    bias,
                })
            })
            .transpose()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let qm = QuantizedModel::new(file.input_shape, file.layers, params, file.quant_config)?;
    let scales: Vec<BigInt> = file
        .layer_scales
        .iter()
        .map(|s| parse_big(s))
        .collect::<Result<_, _>>()?;
    if scales != qm.layer_scales() {
        return Err(QuantError::Format(
            "layer_scales inconsistent with the layers".into(),
        ));
    }
    if parse_big(&file.required_bound)? != *qm.required_bound() {
        return Err(QuantError::Format(
            "required_bound inconsistent with the parameters".into(),
        ));
    }
    let modulus = file.modulus.map(Modulus::new).transpose()?;
    Ok((
        qm,
        QModelMeta {
            modulus,
            source_model: file.source_model,
        },
    ))
}

pub fn save_quantized(
    qm: &QuantizedModel,
    meta: &QModelMeta,
    path: impl AsRef<Path>,
) -> Result<(), QuantError> {
    write_atomic(path.as_ref(), quantized_to_json(qm, meta).as_bytes())?;
    Ok(())
}

pub fn load_quantized(path: impl AsRef<Path>) -> Result<(QuantizedModel, QModelMeta), QuantError> {
    quantized_from_json(&std::fs::read_to_string(path)?)
}
