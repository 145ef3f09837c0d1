//! JSON model files.
//!
//! ```json
//! {"format_version": 1, "input_shape": [2], "layers": [...],
//!  "params": [{"weight": {"shape": [4, 2], "data": "<base64>"}, "bias": {...}}, null, ...]}
//! ```
//!
//! Arrays are row-major, base64 (standard alphabet, padded) over 64-bit
//! little-endian IEEE reals.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::layer::LayerSpec;
use super::model::{Model, Params};
use super::tensor::Tensor;
use super::NnError;
use crate::fsutil::write_atomic;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ArrayFile {
    shape: Vec<usize>,
    data: String,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    weight: ArrayFile,
    bias: ArrayFile,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: Vec<Option<ParamsFile>>,
}

pub fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

pub fn decode_f64s(text: &str) -> Result<Vec<f64>, NnError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| NnError::Format(format!("bad base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(NnError::Format(format!(
            "{} bytes is not a whole number of f64",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn array(t: &Tensor) -> ArrayFile {
    ArrayFile {
        shape: t.shape().to_vec(),
        data: encode_f64s(t.data()),
    }
}

fn tensor(a: ArrayFile) -> Result<Tensor, NnError> {
    let data = decode_f64s(&a.data)?;
    if a.shape.iter().product::<usize>() != data.len() {
        return Err(NnError::Format(format!(
            "array of shape {:?} holds {} values",
            a.shape,
            data.len()
        )));
    }
    Ok(Tensor::new(a.shape, data))
}

pub fn model_to_json(model: &Model) -> String {
    let file = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        input_shape: model.input_shape.clone(),
        layers: model.layers.clone(),
        params: model
            .params
            .iter()
            .map(|p| {
                p.as_ref().map(|p| ParamsFile {
                    weight: array(&p.weight),
                    bias: array(&p.bias),
                })
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("model serialises")
}

pub fn model_from_json(text: &str) -> Result<Model, NnError> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
    if file.format_version != MODEL_FORMAT_VERSION {
        return Err(NnError::Format(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    let params = file
        .params
        .into_iter()
        .map(|p| {
            p.map(|p| {
                Ok::<_, NnError>(Params {
                    weight: tensor(p.weight)?,
                    bias: tensor(p.bias)?,
                })
            })
            .transpose()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Model::from_parts(file.input_shape, file.layers, params)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<(), NnError> {
    write_atomic(path.as_ref(), model_to_json(model).as_bytes())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model, NnError> {
    model_from_json(&std::fs::read_to_string(path)?)
}
