//! Federated graph learning on simulated or socket-connected clients.

pub mod data;
pub mod gnn;
pub mod monitor;
pub mod graph;
pub mod protocol;
pub mod secure;
pub mod transport;
