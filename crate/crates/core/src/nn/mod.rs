//! Real-domain training engine for the activation schemes under comparison.

mod io;
mod layer;
mod loss;
mod model;
mod ops;
mod tensor;
mod train;

pub use io::{
    decode_f64s, encode_f64s, load_model, model_from_json, model_to_json, save_model,
    MODEL_FORMAT_VERSION,
};
pub use layer::{ActivationKind, LayerSpec, PoolKind};
pub use loss::{loss_softmax_xent, softmax};
pub use model::{Cache, Gradients, Mode, Model, Params};
pub use tensor::Tensor;
pub use train::{
    evaluate, lr_search, metrics_csv, predict, sgd_step, train, train_with, EpochMetrics,
    LrCandidate, TrainConfig, LR_GRID, METRICS_HEADER,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    #[error("invalid layer: {0}")]
    InvalidLayer(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite gradient in layer {layer} (gradient explosion)")]
    NonFiniteGradient { layer: usize },
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },
    #[error("every learning-rate candidate diverged")]
    AllDiverged,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
