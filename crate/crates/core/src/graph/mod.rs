//! Attributed undirected graphs in CSR form, GCN normalization, and the
//! per-client views used by federated training.

mod partition;
mod sbm;

pub use partition::{dirichlet_partition, PartitionError, PartitionSpec};
pub use sbm::{sbm_generate, SbmError, SbmParams};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("row_ptr: {0}")]
    RowPtr(String),
    #[error("col_idx[{pos}] = {value} out of range for {n} nodes")]
    ColumnOutOfRange { pos: usize, value: usize, n: usize },
    #[error("self-loop stored at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) has no reverse edge")]
    Asymmetric(usize, usize),
    #[error("feature matrix has {got} values, expected {expected}")]
    FeatureShape { expected: usize, got: usize },
    #[error("non-finite feature at node {0}")]
    NonFiniteFeature(usize),
    #[error("label {label} at node {node} not below class count {classes}")]
    LabelOutOfRange { node: usize, label: u32, classes: u32 },
    #[error("{0} has length {1}, expected {2}")]
    Length(&'static str, usize, usize),
    #[error("node {0} belongs to more than one split mask")]
    OverlappingMasks(usize),
}

/// Which of the three node splits to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Undirected attributed graph with labels and split masks.
///
/// Adjacency is CSR with sorted, de-duplicated neighbor lists, stored in both
/// directions and without self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    features: Vec<f32>,
    feature_dim: usize,
    num_classes: u32,
    labels: Vec<u32>,
    train_mask: Vec<bool>,
    val_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

/// Raw parts of a [`Graph`], validated by [`Graph::from_parts`].
#[derive(Debug, Clone, Default)]
pub struct GraphParts {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub features: Vec<f32>,
    pub feature_dim: usize,
    pub num_classes: u32,
    pub labels: Vec<u32>,
    pub train_mask: Vec<bool>,
    pub val_mask: Vec<bool>,
    pub test_mask: Vec<bool>,
}

impl Graph {
    /// Validates every structural invariant and builds the graph.
    pub fn from_parts(parts: GraphParts) -> Result<Self, GraphError> {
        let GraphParts {
            row_ptr,
            col_idx,
            features,
            feature_dim,
            num_classes,
            labels,
            train_mask,
            val_mask,
            test_mask,
        } = parts;
        if row_ptr.len() < 2 {
            return Err(GraphError::Empty);
        }
        let n = row_ptr.len() - 1;
        if row_ptr[0] != 0 {
            return Err(GraphError::RowPtr("row_ptr[0] must be 0".into()));
        }
        if row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(GraphError::RowPtr("row_ptr must be non-decreasing".into()));
        }
        if row_ptr[n] != col_idx.len() {
            return Err(GraphError::RowPtr(format!(
                "row_ptr[n] = {} but col_idx has {} entries",
                row_ptr[n],
                col_idx.len()
            )));
        }
        for (pos, &value) in col_idx.iter().enumerate() {
            if value >= n {
                return Err(GraphError::ColumnOutOfRange { pos, value, n });
            }
        }
        for u in 0..n {
            let row = &col_idx[row_ptr[u]..row_ptr[u + 1]];
            for (k, &v) in row.iter().enumerate() {
                if v == u {
                    return Err(GraphError::SelfLoop(u));
                }
                if k > 0 && row[k - 1] >= v {
                    if row[k - 1] == v {
                        return Err(GraphError::DuplicateEdge(u, v));
                    }
                    return Err(GraphError::RowPtr(format!("neighbors of node {u} not sorted")));
                }
            }
        }
        for u in 0..n {
            for &v in &col_idx[row_ptr[u]..row_ptr[u + 1]] {
                if col_idx[row_ptr[v]..row_ptr[v + 1]].binary_search(&u).is_err() {
                    return Err(GraphError::Asymmetric(u, v));
                }
            }
        }
        if features.len() != n * feature_dim {
            return Err(GraphError::FeatureShape { expected: n * feature_dim, got: features.len() });
        }
        if feature_dim > 0 {
            if let Some(pos) = features.iter().position(|x| !x.is_finite()) {
                return Err(GraphError::NonFiniteFeature(pos / feature_dim));
            }
        }
        for (name, len) in [
            ("labels", labels.len()),
            ("train_mask", train_mask.len()),
            ("val_mask", val_mask.len()),
            ("test_mask", test_mask.len()),
        ] {
            if len != n {
                return Err(GraphError::Length(name, len, n));
            }
        }
        for (node, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(GraphError::LabelOutOfRange { node, label, classes: num_classes });
            }
        }
        for i in 0..n {
            if (train_mask[i] as u8 + val_mask[i] as u8 + test_mask[i] as u8) > 1 {
                return Err(GraphError::OverlappingMasks(i));
            }
        }
        Ok(Self {
            row_ptr,
            col_idx,
            features,
            feature_dim,
            num_classes,
            labels,
            train_mask,
            val_mask,
            test_mask,
        })
    }

    /// Builds a graph from an undirected edge list. Duplicates and both
    /// orientations of the same edge collapse; self-loops are rejected.
    pub fn from_edges(
        num_nodes: usize,
        edges: &[(usize, usize)],
        features: Vec<f32>,
        feature_dim: usize,
        num_classes: u32,
        labels: Vec<u32>,
        masks: [Vec<bool>; 3],
    ) -> Result<Self, GraphError> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        for &(u, v) in edges {
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::ColumnOutOfRange { pos: 0, value: u.max(v), n: num_nodes });
            }
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut row_ptr = Vec::with_capacity(num_nodes + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut row in adj {
            row.sort_unstable();
            row.dedup();
            col_idx.extend(row);
            row_ptr.push(col_idx.len());
        }
        let [train_mask, val_mask, test_mask] = masks;
        Self::from_parts(GraphParts {
            row_ptr,
            col_idx,
            features,
            feature_dim,
            num_classes,
            labels,
            train_mask,
            val_mask,
            test_mask,
        })
    }

    pub fn into_parts(self) -> GraphParts {
        GraphParts {
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            features: self.features,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            labels: self.labels,
            train_mask: self.train_mask,
            val_mask: self.val_mask,
            test_mask: self.test_mask,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[u]..self.row_ptr[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.row_ptr[u + 1] - self.row_ptr[u]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn feature_row(&self, u: usize) -> &[f32] {
        &self.features[u * self.feature_dim..(u + 1) * self.feature_dim]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn mask(&self, split: Split) -> &[bool] {
        match split {
            Split::Train => &self.train_mask,
            Split::Val => &self.val_mask,
            Split::Test => &self.test_mask,
        }
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes())
            .flat_map(move |u| self.neighbors(u).iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    /// Induced subgraph on `nodes` (in the given order).
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Graph {
        let mut local = vec![usize::MAX; self.num_nodes()];
        for (i, &g) in nodes.iter().enumerate() {
            local[g] = i;
        }
        let d = self.feature_dim;
        let mut row_ptr = Vec::with_capacity(nodes.len() + 1);
        let mut col_idx = Vec::new();
        let mut features = Vec::with_capacity(nodes.len() * d);
        row_ptr.push(0);
        for &g in nodes {
            let start = col_idx.len();
            col_idx.extend(self.neighbors(g).iter().map(|&v| local[v]).filter(|&l| l != usize::MAX));
            col_idx[start..].sort_unstable();
            row_ptr.push(col_idx.len());
            features.extend_from_slice(self.feature_row(g));
        }
        let pick = |m: &[bool]| nodes.iter().map(|&g| m[g]).collect::<Vec<_>>();
        Graph {
            row_ptr,
            col_idx,
            features,
            feature_dim: d,
            num_classes: self.num_classes,
            labels: nodes.iter().map(|&g| self.labels[g]).collect(),
            train_mask: pick(&self.train_mask),
            val_mask: pick(&self.val_mask),
            test_mask: pick(&self.test_mask),
        }
    }
}

/// Symmetrically normalized adjacency with self-loops, `D^-1/2 (A + I) D^-1/2`,
/// in CSR form.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl NormAdj {
    pub fn num_nodes(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn identity(n: usize) -> Self {
        Self { row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: vec![1.0; n] }
    }

    /// Dense copy, for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.num_nodes();
        let mut out = vec![vec![0.0; n]; n];
        for (i, row) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                row[j] = v;
            }
        }
        out
    }
}

/// Builds `D^-1/2 (A + I) D^-1/2` from sorted CSR adjacency without self-loops.
pub(crate) fn normalize_csr(row_ptr: &[usize], col_idx: &[usize]) -> NormAdj {
    let n = row_ptr.len() - 1;
    let inv_sqrt: Vec<f64> =
        (0..n).map(|i| 1.0 / ((row_ptr[i + 1] - row_ptr[i] + 1) as f64).sqrt()).collect();
    let mut out_ptr = Vec::with_capacity(n + 1);
    let mut out_cols = Vec::with_capacity(col_idx.len() + n);
    let mut values = Vec::with_capacity(col_idx.len() + n);
    out_ptr.push(0);
    for i in 0..n {
        let row = &col_idx[row_ptr[i]..row_ptr[i + 1]];
        let split = row.partition_point(|&j| j < i);
        for &j in row[..split].iter().chain(std::iter::once(&i)).chain(&row[split..]) {
            out_cols.push(j);
            // one product per unordered pair, so the matrix is exactly symmetric
            values.push(if i == j { inv_sqrt[i] * inv_sqrt[i] } else { pair_weight(&inv_sqrt, i, j) });
        }
        out_ptr.push(out_cols.len());
    }
    NormAdj { row_ptr: out_ptr, col_idx: out_cols, values }
}

fn pair_weight(inv_sqrt: &[f64], i: usize, j: usize) -> f64 {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    inv_sqrt[a] * inv_sqrt[b]
}

pub fn normalize_adjacency(graph: &Graph) -> NormAdj {
    normalize_csr(&graph.row_ptr, &graph.col_idx)
}

/// A local node with at least one neighbor on another client.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryNode {
    pub local: usize,
    /// Global ids of the cross-client neighbors, ascending.
    pub external: Vec<usize>,
}

impl BoundaryNode {
    pub fn external_count(&self) -> usize {
        self.external.len()
    }
}

/// One client's view: the induced subgraph plus what it knows about its cut.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGraph {
    pub client: usize,
    pub graph: Graph,
    /// `global_ids[local] = global`.
    pub global_ids: Vec<usize>,
    pub boundary: Vec<BoundaryNode>,
}

impl LocalGraph {
    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_train(&self) -> usize {
        self.graph.mask(Split::Train).iter().filter(|&&b| b).count()
    }

    /// Degree in the full graph: local neighbors plus external ones.
    pub fn global_degree(&self) -> Vec<usize> {
        let mut deg: Vec<usize> = (0..self.num_nodes()).map(|u| self.graph.degree(u)).collect();
        for b in &self.boundary {
            deg[b.local] += b.external.len();
        }
        deg
    }
}

pub fn extract_local_subgraph(graph: &Graph, part: &PartitionSpec, client: usize) -> LocalGraph {
    let nodes = part.nodes_of(client).to_vec();
    let sub = graph.induced_subgraph(&nodes);
    let boundary = nodes
        .iter()
        .enumerate()
        .filter_map(|(local, &g)| {
            let external: Vec<usize> =
                graph.neighbors(g).iter().copied().filter(|&v| part.client_of_node[v] != client).collect();
            (!external.is_empty()).then_some(BoundaryNode { local, external })
        })
        .collect();
    LocalGraph { client, graph: sub, global_ids: nodes, boundary }
}
