//! Minimal reverse-mode automatic differentiation.
//!
//! A [`Graph`] records tensor operations on a tape while computing forward
//! values; [`Graph::backward`] walks the tape in reverse and accumulates
//! gradients for every parameter referenced by the graph. Plain forward
//! kernels ([`conv1d`], [`lstm_step`]) are exposed separately for inference
//! paths that do not need a tape.
//!
//! Everything is `f64`. Any operation producing a non-finite value fails
//! immediately with [`NnError::NonFinite`].

mod checkpoint;
mod graph;
mod init;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use graph::{Graph, NodeId};
pub use init::{xavier_uniform, zeros_like_shape};
pub use layers::{conv1d, conv1d_output_len, lstm_step, sigmoid, softmax, DenseParams, LstmCellParams, LstmLayerIds, PackedLstm};
pub use optim::{sgd_step, Adam, Optimizer, Sgd};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss node must be scalar, has shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> NnError {
    NnError::ShapeMismatch { op, detail: detail.into() }
}
