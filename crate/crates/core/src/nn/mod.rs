//! Recurrent sequence models (SRN, LSTM, GRU) with a dense softmax or
//! linear head, trained by backpropagation through time.
//!
//! All learnable parameters of a model live in one flat `Vec<f64>`; each
//! layer owns a contiguous slot of it (input weights, recurrent weights,
//! biases, gate blocks stacked row-wise). Optimizers, gradient clipping,
//! checkpoints and gradient checks all operate on that flat view.

mod cell;
mod checkpoint;
mod grad;
mod linalg;
mod loss;
mod model;
mod optim;
mod spec;
mod train;

use thiserror::Error;

pub use cell::{gru_step, lstm_step, srn_step, CellParams};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_model, save_model, CHECKPOINT_VERSION};
pub use grad::backward;
pub use loss::{loss, mae, LossKind, Output, Target};
pub use model::{init_model, Example, NetworkModel, Standardizer, TargetScale};
pub use optim::{clip_gradient_norm, Adam};
pub use spec::{CellKind, LayerKind, LayerSpec};
pub use train::{train, train_with_validator, EpochRecord, Monitor, TrainConfig, TrainHistory};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input sequence")]
    EmptySequence,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("loss {loss:?} does not fit a {head:?} head")]
    LossMismatch { loss: LossKind, head: LayerKind },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn shape_err(msg: impl Into<String>) -> NnError {
    NnError::ShapeMismatch(msg.into())
}
