//! Graph-classification datasets: loading, generation, batching, splits.

mod split;
mod synthetic;
mod tu;

pub use split::{stratified_kfold, stratified_split};
pub use synthetic::{gen_feature_sum, gen_planted_clusters, gen_synthetic, SyntheticKind};
pub use tu::{load_tu_dataset, load_tu_dataset_with, save_tu_dataset, TuOptions};

use diffcore::Tensor;

use crate::error::{PasError, Result};

/// One undirected graph with dense adjacency and node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    pub adj: Tensor,
    pub feat: Tensor,
    pub label: usize,
}

impl Graph {
    pub fn new(adj: Tensor, feat: Tensor, label: usize) -> Self {
        assert_eq!(adj.rows(), adj.cols(), "adjacency must be square");
        assert_eq!(adj.rows(), feat.rows(), "feature rows must match node count");
        assert!(adj.rows() >= 1, "graph needs at least one node");
        Graph { adj, feat, label }
    }

    pub fn node_count(&self) -> usize {
        self.adj.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.feat.cols()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub name: String,
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
    pub feat_dim: usize,
}

impl Dataset {
    /// Validates shared feature dimension and contiguous label coverage.
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Result<Self> {
        if graphs.is_empty() {
            return Err(PasError::InvalidArgument("dataset has no graphs".into()));
        }
        let feat_dim = graphs[0].feat_dim();
        for g in &graphs {
            if g.feat_dim() != feat_dim {
                return Err(PasError::InvalidArgument(format!(
                    "feature dimension mismatch: {} vs {}",
                    g.feat_dim(),
                    feat_dim
                )));
            }
        }
        let num_classes = graphs.iter().map(|g| g.label).max().unwrap() + 1;
        let mut seen = vec![false; num_classes];
        for g in &graphs {
            seen[g.label] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(PasError::InvalidArgument(format!(
                "label range has a gap: no graph with class {missing}"
            )));
        }
        Ok(Dataset {
            name: name.into(),
            graphs,
            num_classes,
            feat_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.label).collect()
    }

    /// Count of graphs per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in &self.graphs {
            counts[g.label] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Vec<Graph> {
        indices.iter().map(|&i| self.graphs[i].clone()).collect()
    }
}

/// Block-diagonal stack of graphs; the unit of every forward pass.
///
/// The adjacency is kept as per-graph diagonal blocks (off-block entries of
/// the stacked matrix are zero by construction); `adjacency_dense`
/// materializes the full matrix when the flat form is needed.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    adj_blocks: Vec<Tensor>,
    feat: Tensor,
    membership: Vec<usize>,
    mask: Vec<f64>,
    labels: Vec<usize>,
    offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn total_nodes(&self) -> usize {
        self.feat.rows()
    }

    pub fn num_graphs(&self) -> usize {
        self.labels.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.feat.cols()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-node graph index; non-decreasing.
    pub fn membership(&self) -> &[usize] {
        &self.membership
    }

    /// Per-node activity mask; all ones after assembly.
    pub fn mask(&self) -> &[f64] {
        &self.mask
    }

    pub fn feat(&self) -> &Tensor {
        &self.feat
    }

    /// Node range [start, end) of graph `g` in the stacked ordering.
    pub fn node_range(&self, g: usize) -> (usize, usize) {
        (self.offsets[g], self.offsets[g + 1])
    }

    pub fn adj_block(&self, g: usize) -> &Tensor {
        &self.adj_blocks[g]
    }

    /// Feature rows of graph `g` copied out of the stack.
    pub fn feat_block(&self, g: usize) -> Tensor {
        let (start, end) = self.node_range(g);
        let d = self.feat.cols();
        let mut out = Tensor::zeros(end - start, d);
        for (r, i) in (start..end).enumerate() {
            for j in 0..d {
                out.set(r, j, self.feat.get(i, j));
            }
        }
        out
    }

    /// The full block-diagonal adjacency matrix.
    pub fn adjacency_dense(&self) -> Tensor {
        let n = self.total_nodes();
        let mut out = Tensor::zeros(n, n);
        for (g, block) in self.adj_blocks.iter().enumerate() {
            let (start, _) = self.node_range(g);
            for i in 0..block.rows() {
                for j in 0..block.cols() {
                    out.set(start + i, start + j, block.get(i, j));
                }
            }
        }
        out
    }

    /// Splits the batch back into the original graphs.
    pub fn extract_graphs(&self) -> Vec<Graph> {
        (0..self.num_graphs())
            .map(|g| Graph::new(self.adj_blocks[g].clone(), self.feat_block(g), self.labels[g]))
            .collect()
    }
}

/// Stacks graphs block-diagonally; requires a non-empty list with a shared
/// feature dimension.
pub fn make_batch(graphs: &[Graph]) -> Result<GraphBatch> {
    if graphs.is_empty() {
        return Err(PasError::InvalidArgument("cannot batch zero graphs".into()));
    }
    let d = graphs[0].feat_dim();
    let mut offsets = vec![0usize];
    let mut membership = Vec::new();
    for (g, graph) in graphs.iter().enumerate() {
        if graph.feat_dim() != d {
            return Err(PasError::InvalidArgument(format!(
                "feature dimension mismatch in batch: graph {g} has {} expected {d}",
                graph.feat_dim()
            )));
        }
        let n = graph.node_count();
        offsets.push(offsets[g] + n);
        membership.extend(std::iter::repeat(g).take(n));
    }
    let total = *offsets.last().unwrap();
    let mut feat = Tensor::zeros(total, d);
    for (g, graph) in graphs.iter().enumerate() {
        let start = offsets[g];
        for i in 0..graph.node_count() {
            for j in 0..d {
                feat.set(start + i, j, graph.feat.get(i, j));
            }
        }
    }
    Ok(GraphBatch {
        adj_blocks: graphs.iter().map(|g| g.adj.clone()).collect(),
        feat,
        membership,
        mask: vec![1.0; total],
        labels: graphs.iter().map(|g| g.label).collect(),
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph(n: usize, label: usize, d: usize) -> Graph {
        let mut adj = Tensor::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            adj.set(i, i + 1, 1.0);
            adj.set(i + 1, i, 1.0);
        }
        let feat = Tensor::full(n, d, 1.0);
        Graph::new(adj, feat, label)
    }

    #[test]
    fn batch_two_and_three_nodes() {
        let gs = vec![path_graph(2, 0, 1), path_graph(3, 1, 1)];
        let b = make_batch(&gs).unwrap();
        assert_eq!(b.total_nodes(), 5);
        assert_eq!(b.membership(), &[0, 0, 1, 1, 1]);
        let dense = b.adjacency_dense();
        assert_eq!(dense.shape(), (5, 5));
        // No entry crosses the 2x2 / 3x3 boundary.
        for i in 0..2 {
            for j in 2..5 {
                assert_eq!(dense.get(i, j), 0.0);
                assert_eq!(dense.get(j, i), 0.0);
            }
        }
        assert_eq!(dense.get(0, 1), 1.0);
        assert_eq!(dense.get(3, 4), 1.0);
        assert!(b.mask().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn single_graph_batch_is_identity() {
        let g = path_graph(4, 0, 2);
        let b = make_batch(std::slice::from_ref(&g)).unwrap();
        assert_eq!(b.adjacency_dense(), g.adj);
        assert_eq!(b.feat(), &g.feat);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(make_batch(&[]).is_err());
    }

    #[test]
    fn mismatched_feature_dims_rejected() {
        let gs = vec![path_graph(2, 0, 1), path_graph(2, 0, 3)];
        assert!(make_batch(&gs).is_err());
    }

    #[test]
    fn extraction_roundtrips_exactly() {
        let gs = vec![path_graph(2, 1, 2), path_graph(5, 0, 2), path_graph(1, 1, 2)];
        let b = make_batch(&gs).unwrap();
        assert_eq!(b.extract_graphs(), gs);
    }

    #[test]
    fn label_gap_rejected_by_dataset() {
        let gs = vec![path_graph(2, 0, 1), path_graph(2, 2, 1)];
        assert!(Dataset::new("bad", gs).is_err());
    }
}
