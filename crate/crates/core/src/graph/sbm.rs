use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Graph, GraphError};

#[derive(Debug, Error, PartialEq)]
pub enum SbmError {
    #[error("need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")]
    Probabilities { p_in: f64, p_out: f64 },
    #[error("{0} must be at least 1")]
    Zero(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Stochastic block model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub seed: u64,
}

/// Samples a planted-partition graph. Labels are block ids; each feature row
/// is a one-hot block indicator (dimension `block % d`) plus unit Gaussian
/// noise. Nodes are split 60/20/20 into train/val/test at random.
pub fn sbm_generate(params: &SbmParams) -> Result<Graph, SbmError> {
    let SbmParams { blocks, nodes_per_block, p_in, p_out, feature_dim, seed } = *params;
    if !(0.0 <= p_out && p_out < p_in && p_in <= 1.0) {
        return Err(SbmError::Probabilities { p_in, p_out });
    }
    for (name, v) in [("blocks", blocks), ("nodes_per_block", nodes_per_block), ("feature_dim", feature_dim)] {
        if v == 0 {
            return Err(SbmError::Zero(name));
        }
    }
    let n = blocks * nodes_per_block;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block = |u: usize| u / nodes_per_block;

    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if block(u) == block(v) { p_in } else { p_out };
            if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
                edges.push((u, v));
            }
        }
    }

    let mut features = Vec::with_capacity(n * feature_dim);
    for u in 0..n {
        let hot = block(u) % feature_dim;
        for j in 0..feature_dim {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(noise as f32 + if j == hot { 1.0 } else { 0.0 });
        }
    }
    let labels = (0..n).map(|u| block(u) as u32).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = n * 6 / 10;
    let n_val = n * 2 / 10;
    let mut masks = [vec![false; n], vec![false; n], vec![false; n]];
    for (rank, &u) in order.iter().enumerate() {
        let which = if rank < n_train {
            0
        } else if rank < n_train + n_val {
            1
        } else {
            2
        };
        masks[which][u] = true;
    }
    Ok(Graph::from_edges(n, &edges, features, feature_dim, blocks as u32, labels, masks)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Split;

    #[test]
    fn complete_graph_single_block() {
        let g = sbm_generate(&SbmParams {
            blocks: 1,
            nodes_per_block: 10,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 4,
            seed: 0,
        })
        .unwrap();
        assert_eq!(g.num_edges(), 45);
        assert!(g.labels().iter().all(|&l| l == 0));
        assert_eq!(g.mask(Split::Train).iter().filter(|&&b| b).count(), 6);
        assert_eq!(g.mask(Split::Val).iter().filter(|&&b| b).count(), 2);
        assert_eq!(g.mask(Split::Test).iter().filter(|&&b| b).count(), 2);
    }

    #[test]
    fn intra_block_edge_count_near_expectation() {
        let g = sbm_generate(&SbmParams {
            blocks: 4,
            nodes_per_block: 100,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 16,
            seed: 7,
        })
        .unwrap();
        // C(100, 2) * 0.1 = 495
        for b in 0..4 {
            let intra = g.edges().filter(|&(u, v)| u / 100 == b && v / 100 == b).count();
            assert!((intra as f64 - 495.0).abs() <= 0.15 * 495.0, "block {b}: {intra}");
        }
    }

    #[test]
    fn seeds_change_edges_not_shapes() {
        let p = SbmParams { blocks: 4, nodes_per_block: 100, p_in: 0.1, p_out: 0.01, feature_dim: 16, seed: 7 };
        let a = sbm_generate(&p).unwrap();
        let b = sbm_generate(&SbmParams { seed: 8, ..p }).unwrap();
        assert_eq!(a.num_nodes(), b.num_nodes());
        assert_eq!(a.feature_dim(), b.feature_dim());
        assert_ne!(a.col_idx(), b.col_idx());
        assert_eq!(a, sbm_generate(&p).unwrap());
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = SbmParams { blocks: 2, nodes_per_block: 5, p_in: 0.0, p_out: 0.0, feature_dim: 2, seed: 0 };
        assert!(matches!(sbm_generate(&p), Err(SbmError::Probabilities { .. })));
        let p = SbmParams { p_in: 0.5, feature_dim: 0, ..p };
        assert_eq!(sbm_generate(&p), Err(SbmError::Zero("feature_dim")));
    }
}
