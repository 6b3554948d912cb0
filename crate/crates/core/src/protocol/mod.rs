//! Server and trainer actors for FedAvg and FedGCN.

mod aggregate;
mod message;
pub mod pretrain;
mod run;
mod select;
mod server;
mod trainer;

use thiserror::Error;

pub use aggregate::fedavg_aggregate;
pub use message::{FeatureRows, Message, MessageType, ParamPayload};
pub use run::{run_experiment, run_fedgraph, train_centralized, RunOptions, RunOutput};
pub use select::select_clients;
pub use server::{initial_model, projection_seed, Server, ServerOutcome, ServerSettings};
pub use trainer::{DpSettings, Fault, Trainer, TrainerSettings};

use crate::data::{ConfigError, DataError};
use crate::gnn::GnnError;
use crate::graph::PartitionError;
use crate::monitor::MonitorError;
use crate::secure::{FixedPointCodec, SecureError};
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport: {0}")]
    Transport(#[from] TransportError),
    #[error("secure aggregation: {0}")]
    Secure(#[from] SecureError),
    #[error("model: {0}")]
    Gnn(#[from] GnnError),
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Data(#[from] DataError),
    #[error("partition: {0}")]
    Partition(#[from] PartitionError),
    #[error("metrics: {0}")]
    Monitor(#[from] MonitorError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{0}")]
    Selection(String),
    #[error("registration: {0}")]
    Registration(String),
    #[error("expected {expected}, got {got}")]
    Unexpected { expected: &'static str, got: &'static str },
    #[error("trainer has not received a model yet")]
    NotSynchronized,
    #[error("no trainer contributed to node {node} requested by trainer {trainer}")]
    MissingContribution { node: u32, trainer: u32 },
    #[error("trainer {trainer} did not answer in round {round}")]
    Timeout { round: u32, trainer: u32 },
    #[error("trainer thread panicked")]
    Panicked,
}

/// Fixed-point parameters for everything encrypted on the wire: 24
/// fractional bits, values up to 2^53 / 2^24 ≈ 5.4e8 in magnitude, and room
/// for 1024 summands.
pub(crate) fn protocol_codec() -> FixedPointCodec {
    FixedPointCodec::new(24, 1 << 53, 1024)
}
