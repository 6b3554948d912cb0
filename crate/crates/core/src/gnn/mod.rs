//! Dense kernels and a fixed two-layer GCN with hand-written gradients.

mod matrix;
mod model;
mod optim;
mod sampler;

pub use matrix::{Matrix, Scalar};
pub use model::{
    backward, count_correct, evaluate, forward, log_softmax_rows, nll_loss_and_grad, predict,
    FirstLayer, ForwardCache, GcnModel, ParamGrads,
};
pub use optim::{OptimizerKind, OptimizerState};
pub use sampler::{minibatch_sample, SubBatch};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GnnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("evaluation/loss mask selects no nodes")]
    EmptyMask,
    #[error("local graph has no training nodes")]
    NoTrainNodes,
}

/// Default GCN hyper-parameters.
pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_LR: f64 = 0.01;
pub const DEFAULT_WEIGHT_DECAY: f64 = 5e-4;
