//! Dataset container, dataset specs and experiment configuration.

mod config;
mod fgb;

use std::path::Path;

use thiserror::Error;

use crate::graph::{sbm_generate, Graph, SbmParams};

pub use config::{
    parse_config, ConfigError, ConfigIssue, ExperimentConfig, Method, SamplingType, TransportKind, DEFAULT_DP_CLIP,
    DEFAULT_DP_SIGMA,
};
pub use fgb::{decode_fgb, encode_fgb, load_fgb, write_fgb, FGB_MAGIC, FGB_VERSION};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset spec: {0}")]
    Spec(String),
}

/// Parses `sbm:blocks=4,n=100,p_in=0.1,p_out=0.01,d=16,seed=7`. `n` is nodes
/// per block; omitted keys take the values shown.
pub fn parse_sbm_spec(spec: &str) -> Result<SbmParams, DataError> {
    let body = spec.strip_prefix("sbm:").ok_or_else(|| DataError::Spec(format!("{spec:?} does not start with sbm:")))?;
    let mut p = SbmParams { blocks: 4, nodes_per_block: 100, p_in: 0.1, p_out: 0.01, feature_dim: 16, seed: 7 };
    for item in body.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| DataError::Spec(format!("expected key=value, got {item:?}")))?;
        let bad = || DataError::Spec(format!("invalid value for {k}: {v:?}"));
        match k.trim() {
            "blocks" => p.blocks = v.parse().map_err(|_| bad())?,
            "n" => p.nodes_per_block = v.parse().map_err(|_| bad())?,
            "p_in" => p.p_in = v.parse().map_err(|_| bad())?,
            "p_out" => p.p_out = v.parse().map_err(|_| bad())?,
            "d" => p.feature_dim = v.parse().map_err(|_| bad())?,
            "seed" => p.seed = v.parse().map_err(|_| bad())?,
            other => return Err(DataError::Spec(format!("unknown sbm key {other:?}"))),
        }
    }
    Ok(p)
}

/// Loads the graph named by a config `dataset` value.
pub fn load_dataset(dataset: &str) -> Result<Graph, DataError> {
    if dataset.starts_with("sbm:") {
        let params = parse_sbm_spec(dataset)?;
        sbm_generate(&params).map_err(|e| DataError::Spec(e.to_string()))
    } else {
        load_fgb(Path::new(dataset))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sbm_spec_defaults_and_overrides() {
        let p = parse_sbm_spec("sbm:blocks=3,n=20,seed=9").unwrap();
        assert_eq!((p.blocks, p.nodes_per_block, p.seed, p.feature_dim), (3, 20, 9, 16));
        assert!(parse_sbm_spec("sbm:q=1").is_err());
        assert!(parse_sbm_spec("sbm:n=x").is_err());
        assert!(parse_sbm_spec("cora").is_err());
        assert_eq!(load_dataset("sbm:blocks=2,n=5,p_in=0.5,p_out=0.1,d=2").unwrap().num_nodes(), 10);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_dataset("/nonexistent/x.fgb"), Err(DataError::Io(_))));
    }
}
