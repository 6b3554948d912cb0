use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use super::Graph;

const MAX_REDRAWS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("cannot split {nodes} nodes across {clients} clients")]
    TooManyClients { clients: usize, nodes: usize },
    #[error("need at least one client")]
    NoClients,
    #[error("beta must be positive and finite, got {0}")]
    InvalidBeta(f64),
    #[error("some client stayed empty after {0} Dirichlet redraws")]
    EmptyClient(usize),
    #[error("assignment has {got} entries for {nodes} nodes")]
    Length { got: usize, nodes: usize },
    #[error("node {node} assigned to client {client} of {clients}")]
    ClientOutOfRange { node: usize, client: usize, clients: usize },
}

/// Node-to-client assignment of a graph and its cut.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionSpec {
    pub num_clients: usize,
    pub client_of_node: Vec<usize>,
    /// Position of each node inside its client's node list.
    pub local_index: Vec<usize>,
    /// Edges whose endpoints sit on different clients, `(u, v)` with `u < v`.
    pub cross_edges: Vec<(usize, usize)>,
    members: Vec<Vec<usize>>,
}

impl PartitionSpec {
    /// Wraps an explicit assignment. Every client must own a node.
    pub fn from_assignment(
        client_of_node: Vec<usize>,
        num_clients: usize,
        graph: &Graph,
    ) -> Result<Self, PartitionError> {
        let n = graph.num_nodes();
        if num_clients == 0 {
            return Err(PartitionError::NoClients);
        }
        if client_of_node.len() != n {
            return Err(PartitionError::Length { got: client_of_node.len(), nodes: n });
        }
        let mut members = vec![Vec::new(); num_clients];
        let mut local_index = vec![0; n];
        for (node, &client) in client_of_node.iter().enumerate() {
            if client >= num_clients {
                return Err(PartitionError::ClientOutOfRange { node, client, clients: num_clients });
            }
            local_index[node] = members[client].len();
            members[client].push(node);
        }
        if members.iter().any(Vec::is_empty) {
            return Err(PartitionError::EmptyClient(0));
        }
        let cross_edges =
            graph.edges().filter(|&(u, v)| client_of_node[u] != client_of_node[v]).collect();
        Ok(Self { num_clients, client_of_node, local_index, cross_edges, members })
    }

    /// Global ids owned by `client`, ascending.
    pub fn nodes_of(&self, client: usize) -> &[usize] {
        &self.members[client]
    }

    pub fn client_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }
}

/// Label-skewed split: for every class, the share of its nodes given to each
/// client follows a symmetric Dirichlet(`beta`) draw. Large `beta` is close to
/// IID; small `beta` concentrates each class on few clients.
pub fn dirichlet_partition(
    graph: &Graph,
    num_clients: usize,
    beta: f64,
    seed: u64,
) -> Result<PartitionSpec, PartitionError> {
    let n = graph.num_nodes();
    if num_clients == 0 {
        return Err(PartitionError::NoClients);
    }
    if num_clients > n {
        return Err(PartitionError::TooManyClients { clients: num_clients, nodes: n });
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(PartitionError::InvalidBeta(beta));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(beta, 1.0).map_err(|_| PartitionError::InvalidBeta(beta))?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes() as usize];
    for (node, &label) in graph.labels().iter().enumerate() {
        by_class[label as usize].push(node);
    }

    for _ in 0..MAX_REDRAWS {
        let mut assignment = vec![0usize; n];
        let mut counts = vec![0usize; num_clients];
        for class_nodes in &by_class {
            if class_nodes.is_empty() {
                continue;
            }
            let mut shuffled = class_nodes.clone();
            shuffled.shuffle(&mut rng);
            let weights: Vec<f64> = (0..num_clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            let len = shuffled.len();
            let mut start = 0;
            let mut cumulative = 0.0;
            for (client, w) in weights.iter().enumerate() {
                cumulative += w / total;
                let end = if client + 1 == num_clients {
                    len
                } else {
                    ((cumulative * len as f64).floor() as usize).clamp(start, len)
                };
                for &node in &shuffled[start..end] {
                    assignment[node] = client;
                }
                counts[client] += end - start;
                start = end;
            }
        }
        if counts.iter().all(|&c| c > 0) {
            return PartitionSpec::from_assignment(assignment, num_clients, graph);
        }
    }
    Err(PartitionError::EmptyClient(MAX_REDRAWS))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{sbm_generate, SbmParams};

    fn sbm() -> Graph {
        sbm_generate(&SbmParams {
            blocks: 4,
            nodes_per_block: 100,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 8,
            seed: 3,
        })
        .unwrap()
    }

    #[test]
    fn single_client_takes_everything() {
        let g = sbm();
        let p = dirichlet_partition(&g, 1, 10000.0, 0).unwrap();
        assert!(p.client_of_node.iter().all(|&c| c == 0));
        assert!(p.cross_edges.is_empty());
    }

    #[test]
    fn deterministic_given_seed() {
        let g = sbm();
        let a = dirichlet_partition(&g, 10, 0.5, 42).unwrap();
        let b = dirichlet_partition(&g, 10, 0.5, 42).unwrap();
        assert_eq!(a, b);
        let c = dirichlet_partition(&g, 10, 0.5, 43).unwrap();
        assert_ne!(a.client_of_node, c.client_of_node);
    }

    #[test]
    fn errors() {
        let g = sbm();
        assert_eq!(
            dirichlet_partition(&g, 401, 1.0, 0),
            Err(PartitionError::TooManyClients { clients: 401, nodes: 400 })
        );
        assert_eq!(dirichlet_partition(&g, 0, 1.0, 0), Err(PartitionError::NoClients));
        assert_eq!(dirichlet_partition(&g, 2, 0.0, 0), Err(PartitionError::InvalidBeta(0.0)));
    }

    #[test]
    fn unreachable_non_emptiness() {
        // one node per client with extreme skew almost never lands evenly
        let g = sbm_generate(&SbmParams {
            blocks: 1,
            nodes_per_block: 3,
            p_in: 1.0,
            p_out: 0.0,
            feature_dim: 1,
            seed: 0,
        })
        .unwrap();
        assert_eq!(dirichlet_partition(&g, 3, 1e-4, 0), Err(PartitionError::EmptyClient(100)));
    }
}
