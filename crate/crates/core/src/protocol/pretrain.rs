//! Local arithmetic of the FedGCN pre-train exchange.
//!
//! For one hop over input rows `h`, trainer `i` holding nodes `Vᵢ`:
//! * uploads, for every node `w ∉ Vᵢ` adjacent to `Vᵢ`, the partial sum
//!   `Σ_{u ∈ N(w) ∩ Vᵢ} h[u]`;
//! * computes `(A_local + I)·h` for its own nodes;
//! * adds the server's per-node totals of the other trainers' partial sums
//!   to its boundary rows.
//!
//! The result is `(A + I)·h` restricted to `Vᵢ`.

use std::collections::BTreeMap;

use crate::gnn::Matrix;
use crate::graph::{Graph, LocalGraph};

/// Node ids one trainer sends and asks for in each hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CutPlan {
    /// Global ids of off-client neighbors, ascending.
    pub external: Vec<usize>,
    /// Global ids of own boundary nodes, in `LocalGraph::boundary` order.
    pub boundary: Vec<usize>,
}

impl CutPlan {
    pub fn new(local: &LocalGraph) -> Self {
        let mut external: Vec<usize> = local.boundary.iter().flat_map(|b| b.external.iter().copied()).collect();
        external.sort_unstable();
        external.dedup();
        let boundary = local.boundary.iter().map(|b| local.global_ids[b.local]).collect();
        Self { external, boundary }
    }
}

/// Row-major partial sums for `plan.external`.
pub fn outgoing_sums(local: &LocalGraph, plan: &CutPlan, h: &Matrix<f64>) -> Vec<f64> {
    let dim = h.cols();
    let slot: BTreeMap<usize, usize> = plan.external.iter().enumerate().map(|(i, &g)| (g, i)).collect();
    let mut out = vec![0f64; plan.external.len() * dim];
    for b in &local.boundary {
        let row = h.row(b.local);
        for w in &b.external {
            let s = slot[w];
            for (o, &x) in out[s * dim..(s + 1) * dim].iter_mut().zip(row) {
                *o += x;
            }
        }
    }
    out
}

/// `(A_local + I)·h`.
pub fn local_sums(local: &LocalGraph, h: &Matrix<f64>) -> Matrix<f64> {
    let mut out = h.clone();
    for u in 0..local.num_nodes() {
        for &v in local.graph.neighbors(u) {
            for j in 0..h.cols() {
                out.set(u, j, out.get(u, j) + h.get(v, j));
            }
        }
    }
    out
}

/// Adds received totals (rows in `plan.boundary` order) into `partial`.
pub fn complete(partial: &mut Matrix<f64>, local: &LocalGraph, received: &[f64]) {
    let dim = partial.cols();
    for (k, b) in local.boundary.iter().enumerate() {
        for (o, &x) in partial.row_mut(b.local).iter_mut().zip(&received[k * dim..(k + 1) * dim]) {
            *o += x;
        }
    }
}

/// Centralized `(A + I)^hops · x`.
pub fn centralized_aggregate(graph: &Graph, x: &Matrix<f64>, hops: u8) -> Matrix<f64> {
    let mut h = x.clone();
    for _ in 0..hops {
        let mut next = h.clone();
        for u in 0..graph.num_nodes() {
            for &v in graph.neighbors(u) {
                for j in 0..h.cols() {
                    next.set(u, j, next.get(u, j) + h.get(v, j));
                }
            }
        }
        h = next;
    }
    h
}

/// Model input from aggregated rows: each row divided by
/// `(global degree + 1)^hops`, so layer 1 sees neighborhood means.
pub fn normalize_rows(x_hat: &Matrix<f64>, global_degree: &[usize], hops: u8) -> Matrix<f32> {
    Matrix::from_fn(x_hat.rows(), x_hat.cols(), |i, j| {
        (x_hat.get(i, j) / ((global_degree[i] + 1) as f64).powi(hops as i32)) as f32
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{extract_local_subgraph, PartitionSpec};

    fn cycle4() -> Graph {
        Graph::from_edges(
            4,
            &[(0, 1), (1, 2), (2, 3), (3, 0)],
            vec![1.0, 10.0, 100.0, 1000.0],
            1,
            1,
            vec![0; 4],
            [vec![true; 4], vec![false; 4], vec![false; 4]],
        )
        .unwrap()
    }

    #[test]
    fn four_cycle_split_by_hand() {
        let g = cycle4();
        let part = PartitionSpec::from_assignment(vec![0, 0, 1, 1], 2, &g).unwrap();
        let locals: Vec<_> = (0..2).map(|c| extract_local_subgraph(&g, &part, c)).collect();
        let plans: Vec<_> = locals.iter().map(CutPlan::new).collect();
        assert_eq!(plans[0].external, vec![2, 3]);
        assert_eq!(plans[1].external, vec![0, 1]);
        let feats = |l: &LocalGraph| Matrix::from_fn(l.num_nodes(), 1, |i, _| l.graph.feature_row(i)[0] as f64);
        let up: Vec<Vec<f64>> = locals.iter().zip(&plans).map(|(l, p)| outgoing_sums(l, p, &feats(l))).collect();
        // client 1 sends x₂ toward node 1 and x₃ toward node 0
        assert_eq!(up[1], vec![1000.0, 100.0]);
        let l0 = &locals[0];
        let mut h0 = local_sums(l0, &feats(l0));
        // node 0's boundary neighbor is 3, node 1's is 2
        let received: Vec<f64> = plans[0].boundary.iter().map(|&g| up[1][g]).collect();
        complete(&mut h0, l0, &received);
        assert_eq!(h0.get(0, 0), 1.0 + 10.0 + 1000.0);
        let central = centralized_aggregate(&g, &Matrix::from_fn(4, 1, |i, _| g.feature_row(i)[0] as f64), 1);
        assert_eq!(h0.get(0, 0), central.get(0, 0));
        assert_eq!(h0.get(1, 0), central.get(1, 0));
    }

    #[test]
    fn normalization_divides_by_closed_degree() {
        let x = Matrix::from_vec(2, 1, vec![6.0, 8.0]).unwrap();
        let n = normalize_rows(&x, &[2, 1], 1);
        assert_eq!(n.as_slice(), &[2.0, 4.0]);
        let n2 = normalize_rows(&x, &[2, 1], 2);
        assert_eq!(n2.as_slice(), &[6.0 / 9.0, 2.0]);
    }
}
