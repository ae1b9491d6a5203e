//! Graph containers and everything derived from the raw structure: the
//! normalized propagation operators, homophily statistics, synthetic SBM
//! graphs, and train/val/test splits.

mod homophily;
mod io;
mod sbm;
mod splits;

use std::sync::Arc;

use crate::error::{GnnMoeError, Result};
use crate::tensor::{DenseMatrix, SparseMatrix};

pub use homophily::{node_homophily, partition_subspaces, HomophilyProfile};
pub use io::{load_dataset, load_splits, save_dataset, save_splits, FEATURES_MAGIC};
pub use sbm::{generate_sbm, generate_sbm_blocks, mixed_block_matrix, SbmParams};
pub use splits::{make_splits, SplitSpec, DEFAULT_SPLIT_RATIOS};

#[derive(Clone, Debug, PartialEq)]
pub struct GraphDataset {
    pub name: String,
    pub num_classes: usize,
    /// Symmetric 0/1 adjacency without self-loops.
    pub adjacency: SparseMatrix,
    pub features: DenseMatrix,
    pub labels: Vec<usize>,
}

impl GraphDataset {
    /// Symmetrizes `edges`, collapses duplicates, and drops self-loops.
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let n = labels.len();
        if features.rows() != n {
            return Err(GnnMoeError::dim("GraphDataset::new", format!("{n} feature rows"), features.rows()));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c >= num_classes) {
            return Err(GnnMoeError::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        let mut trip = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GnnMoeError::InvalidArgument(format!("edge ({u}, {v}) with {n} nodes")));
            }
            if u != v {
                trip.push((u, v, 1.0));
                trip.push((v, u, 1.0));
            }
        }
        let summed = SparseMatrix::from_triplets(n, n, trip)?;
        let adjacency = summed.with_values(vec![1.0; summed.nnz()])?;
        Ok(GraphDataset {
            name: name.into(),
            num_classes,
            adjacency,
            features,
            labels,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    /// Undirected edge count (each stored once per direction).
    pub fn num_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency.row_nnz(node)
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        self.adjacency.row(node).0
    }

    /// Each undirected edge once, as `(u, v)` with `u < v`.
    pub fn edge_list(&self) -> Vec<(usize, usize)> {
        (0..self.num_nodes())
            .flat_map(|u| self.neighbors(u).iter().filter(move |&&v| u < v).map(move |&v| (u, v)))
            .collect()
    }

    pub fn one_hot_labels(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.num_nodes(), self.num_classes);
        for (i, &c) in self.labels.iter().enumerate() {
            m.set(i, c, 1.0);
        }
        m
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(GnnMoeError::InvalidArgument("not a permutation".into()));
        }
        let edges: Vec<(usize, usize)> = self.edge_list().into_iter().map(|(u, v)| (perm[u], perm[v])).collect();
        let mut features = DenseMatrix::zeros(n, self.num_features());
        let mut labels = vec![0; n];
        for i in 0..n {
            features.row_mut(perm[i]).copy_from_slice(self.features.row(i));
            labels[perm[i]] = self.labels[i];
        }
        GraphDataset::new(self.name.clone(), self.num_classes, &edges, features, labels)
    }
}

/// `(D+I)^{-1/2} (A+I) (D+I)^{-1/2}`, self-loops included.
pub fn normalize_adjacency(g: &GraphDataset) -> SparseMatrix {
    let n = g.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt()).collect();
    let trip = (0..n).flat_map(|i| {
        let inv_sqrt = &inv_sqrt;
        g.neighbors(i)
            .iter()
            .map(move |&j| (i, j, inv_sqrt[i] * inv_sqrt[j]))
            .chain(std::iter::once((i, i, inv_sqrt[i] * inv_sqrt[i])))
    });
    SparseMatrix::from_triplets(n, n, trip).expect("indices come from a valid adjacency")
}

/// `D⁻¹ A`: row i averages over the neighbors of i; rows of isolated nodes
/// are empty.
pub fn mean_aggregator(g: &GraphDataset) -> SparseMatrix {
    let values: Vec<f64> = (0..g.num_nodes())
        .flat_map(|i| {
            let d = g.degree(i);
            std::iter::repeat_n(1.0 / d as f64, d)
        })
        .collect();
    g.adjacency.with_values(values).expect("one value per stored entry")
}

/// Sparsity pattern of `A + I`, used by attention propagation.
pub fn attention_pattern(g: &GraphDataset) -> SparseMatrix {
    let n = g.num_nodes();
    let trip = (0..n).flat_map(|i| {
        g.neighbors(i)
            .iter()
            .map(move |&j| (i, j, 1.0))
            .chain(std::iter::once((i, i, 1.0)))
    });
    SparseMatrix::from_triplets(n, n, trip).expect("indices come from a valid adjacency")
}

/// Propagation operators derived once per dataset and shared by every
/// forward pass.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    pub normalized: Arc<SparseMatrix>,
    pub mean: Arc<SparseMatrix>,
    pub attention: Arc<SparseMatrix>,
}

impl GraphOperators {
    pub fn new(g: &GraphDataset) -> Self {
        GraphOperators {
            normalized: Arc::new(normalize_adjacency(g)),
            mean: Arc::new(mean_aggregator(g)),
            attention: Arc::new(attention_pattern(g)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> GraphDataset {
        GraphDataset::new("path", 2, &[(0, 1), (1, 2)], DenseMatrix::identity(3), vec![0, 1, 0]).unwrap()
    }

    #[test]
    fn symmetrizes_dedups_and_drops_self_loops() {
        let g = GraphDataset::new(
            "t",
            1,
            &[(0, 1), (1, 0), (0, 1), (2, 2), (1, 2)],
            DenseMatrix::zeros(3, 1),
            vec![0; 3],
        )
        .unwrap();
        assert_eq!(g.adjacency.nnz(), 4);
        assert!(g.adjacency.is_symmetric(0.0));
        assert_eq!(g.adjacency.get(2, 2), 0.0);
        assert_eq!(g.num_edges(), 2);
    }

    #[test]
    fn rejects_bad_labels_and_shapes() {
        assert!(GraphDataset::new("t", 2, &[], DenseMatrix::zeros(2, 1), vec![0, 2]).is_err());
        assert!(GraphDataset::new("t", 2, &[], DenseMatrix::zeros(3, 1), vec![0, 1]).is_err());
        assert!(GraphDataset::new("t", 2, &[(0, 5)], DenseMatrix::zeros(2, 1), vec![0, 1]).is_err());
    }

    #[test]
    fn normalized_isolated_node() {
        let g = GraphDataset::new("one", 1, &[], DenseMatrix::zeros(1, 1), vec![0]).unwrap();
        let a = normalize_adjacency(&g);
        assert_eq!(a.to_dense().data(), &[1.0]);
    }

    #[test]
    fn normalized_path_matches_dense_evaluation() {
        let g = path3();
        let a_hat = normalize_adjacency(&g);
        // dense (D+I)^{-1/2}(A+I)(D+I)^{-1/2}
        let mut a = g.adjacency.to_dense();
        for i in 0..3 {
            a.set(i, i, 1.0);
        }
        let deg = [2.0f64, 3.0, 2.0];
        let mut dense = DenseMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                dense.set(i, j, a.get(i, j) / (deg[i].sqrt() * deg[j].sqrt()));
            }
        }
        assert!(a_hat.to_dense().max_abs_diff(&dense) < 1e-15);
        assert!((a_hat.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((a_hat.get(0, 1) - 0.408_248_290_463_863).abs() < 1e-12);
        assert!((a_hat.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a_hat.get(2, 2) - 0.5).abs() < 1e-15);
        for i in 0..3 {
            assert!((a_hat.get(i, i) - 1.0 / (g.degree(i) + 1) as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn mean_aggregator_rows() {
        let g = GraphDataset::new("t", 1, &[(0, 1), (1, 2)], DenseMatrix::zeros(4, 1), vec![0; 4]).unwrap();
        let m = mean_aggregator(&g);
        assert_eq!(m.get(1, 0), 0.5);
        assert_eq!(m.get(1, 2), 0.5);
        assert_eq!(m.row_nnz(3), 0);
    }

    #[test]
    fn permutation_relabels_consistently() {
        let g = path3();
        let p = g.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.labels, vec![1, 0, 0]);
        assert_eq!(p.degree(0), 2);
        assert!(g.permute(&[0, 0, 1]).is_err());
    }
}
