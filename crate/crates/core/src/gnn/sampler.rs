use rand::seq::index;
use rand::Rng;

use super::GnnError;
use crate::graph::{normalize_csr, Graph, NormAdj, Split};

/// A sampled training batch over a client's local graph.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBatch {
    /// Local node ids in the batch, ascending.
    pub nodes: Vec<usize>,
    /// Renormalized adjacency of the subgraph induced on `nodes`.
    pub adj: NormAdj,
    /// Which entries of `nodes` are loss-bearing seeds.
    pub seed_mask: Vec<bool>,
}

/// Picks up to `batch_size` training nodes uniformly without replacement and
/// adds up to `fanout` uniformly chosen neighbors of each (one hop).
pub fn minibatch_sample(
    graph: &Graph,
    batch_size: usize,
    fanout: usize,
    rng: &mut impl Rng,
) -> Result<SubBatch, GnnError> {
    let train: Vec<usize> =
        graph.mask(Split::Train).iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    if train.is_empty() {
        return Err(GnnError::NoTrainNodes);
    }
    if batch_size == 0 {
        return Err(GnnError::Shape("batch_size must be at least 1".into()));
    }
    let take = batch_size.min(train.len());
    let seeds: Vec<usize> = index::sample(rng, train.len(), take).into_iter().map(|i| train[i]).collect();

    let n = graph.num_nodes();
    let mut in_batch = vec![false; n];
    let mut is_seed = vec![false; n];
    for &s in &seeds {
        in_batch[s] = true;
        is_seed[s] = true;
    }
    for &s in &seeds {
        let nbrs = graph.neighbors(s);
        let k = fanout.min(nbrs.len());
        for i in index::sample(rng, nbrs.len(), k) {
            in_batch[nbrs[i]] = true;
        }
    }
    let nodes: Vec<usize> = (0..n).filter(|&u| in_batch[u]).collect();
    let mut local = vec![usize::MAX; n];
    for (i, &u) in nodes.iter().enumerate() {
        local[u] = i;
    }
    let mut row_ptr = vec![0];
    let mut col_idx = Vec::new();
    for &u in &nodes {
        col_idx.extend(graph.neighbors(u).iter().filter(|&&v| in_batch[v]).map(|&v| local[v]));
        row_ptr.push(col_idx.len());
    }
    let adj = normalize_csr(&row_ptr, &col_idx);
    let seed_mask = nodes.iter().map(|&u| is_seed[u]).collect();
    Ok(SubBatch { nodes, adj, seed_mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalize_adjacency;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn all_train(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::from_edges(
            n,
            edges,
            vec![0.0; n],
            1,
            1,
            vec![0; n],
            [vec![true; n], vec![false; n], vec![false; n]],
        )
        .unwrap()
    }

    #[test]
    fn saturated_batch_is_whole_graph() {
        let g = all_train(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = minibatch_sample(&g, 100, 100, &mut rng).unwrap();
        assert_eq!(b.nodes, (0..6).collect::<Vec<_>>());
        assert_eq!(b.adj, normalize_adjacency(&g));
        assert!(b.seed_mask.iter().all(|&s| s));
    }

    #[test]
    fn one_seed_no_fanout() {
        let g = all_train(4, &[(0, 1), (1, 2), (2, 3)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = minibatch_sample(&g, 1, 0, &mut rng).unwrap();
        assert_eq!(b.nodes.len(), 1);
        assert_eq!(b.adj.to_dense(), vec![vec![1.0]]);
        assert_eq!(b.seed_mask, vec![true]);
    }

    #[test]
    fn no_train_nodes() {
        let g = Graph::from_edges(2, &[(0, 1)], vec![0.0; 2], 1, 1, vec![0; 2], [vec![false; 2], vec![false; 2], vec![false; 2]])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(minibatch_sample(&g, 4, 2, &mut rng).unwrap_err(), GnnError::NoTrainNodes);
    }

    #[test]
    fn deterministic_given_rng_state() {
        let g = all_train(20, &(0..19).map(|i| (i, i + 1)).collect::<Vec<_>>());
        let a = minibatch_sample(&g, 5, 1, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = minibatch_sample(&g, 5, 1, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn repeated_draws_cover_every_train_node() {
        let n = 40;
        let g = all_train(n, &(0..n - 1).map(|i| (i, i + 1)).collect::<Vec<_>>());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut seen = vec![false; n];
        for _ in 0..1000 {
            let b = minibatch_sample(&g, n / 4, 2, &mut rng).unwrap();
            for (&u, &s) in b.nodes.iter().zip(&b.seed_mask) {
                if s {
                    seen[u] = true;
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }
}
