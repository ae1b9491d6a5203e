//! Stochastic block model graphs with class-centroid features.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::GraphDataset;
use crate::error::{GnnMoeError, Result};
use crate::rng::RngState;
use crate::tensor::DenseMatrix;

/// Centroid of class `c` is `CENTROID_SCALE · e_c`.
pub const CENTROID_SCALE: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SbmParams {
    pub nodes: usize,
    pub classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    pub noise: f64,
}

impl Default for SbmParams {
    fn default() -> Self {
        SbmParams {
            nodes: 400,
            classes: 4,
            p_in: 0.05,
            p_out: 0.005,
            feature_dim: 16,
            noise: 1.0,
        }
    }
}

/// Two-parameter SBM: edge probability `p_in` inside a class, `p_out`
/// across classes. Class sizes are balanced (node `i` has class
/// `i mod classes`).
pub fn generate_sbm(params: &SbmParams, rng: &mut RngState) -> Result<GraphDataset> {
    let k = params.classes;
    let probs: Vec<Vec<f64>> = (0..k)
        .map(|a| (0..k).map(|b| if a == b { params.p_in } else { params.p_out }).collect())
        .collect();
    let name = format!("sbm-n{}-c{}-pin{}-pout{}", params.nodes, k, params.p_in, params.p_out);
    generate_sbm_blocks(name, params.nodes, &probs, params.feature_dim, params.noise, rng)
}

/// Block-probability matrix where the first `assortative` classes connect
/// mostly inside themselves and the remaining classes connect mostly to
/// each other but not inside themselves.
pub fn mixed_block_matrix(classes: usize, assortative: usize, p_high: f64, p_low: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|a| {
            (0..classes)
                .map(|b| {
                    let a_assort = a < assortative;
                    let b_assort = b < assortative;
                    match (a == b, a_assort, b_assort) {
                        (true, true, _) => p_high,
                        (true, false, _) => 0.0,
                        (false, false, false) => p_high,
                        _ => p_low,
                    }
                })
                .collect()
        })
        .collect()
}

/// General SBM from a symmetric block-probability matrix.
pub fn generate_sbm_blocks(
    name: impl Into<String>,
    nodes: usize,
    block_probs: &[Vec<f64>],
    feature_dim: usize,
    noise: f64,
    rng: &mut RngState,
) -> Result<GraphDataset> {
    let k = block_probs.len();
    if k == 0 || nodes < k {
        return Err(GnnMoeError::InvalidArgument(format!("{nodes} nodes for {k} classes")));
    }
    if feature_dim < k {
        return Err(GnnMoeError::InvalidArgument(format!(
            "feature dimension {feature_dim} cannot hold {k} class centroids"
        )));
    }
    for (a, row) in block_probs.iter().enumerate() {
        if row.len() != k {
            return Err(GnnMoeError::dim("generate_sbm_blocks", k, row.len()));
        }
        for (b, &p) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) || block_probs[b][a] != p {
                return Err(GnnMoeError::InvalidArgument(format!(
                    "block probabilities must be symmetric and in [0, 1] (entry {a},{b})"
                )));
            }
        }
    }
    let labels: Vec<usize> = (0..nodes).map(|i| i % k).collect();

    let mut edge_stream = rng.stream();
    let mut edges = Vec::new();
    for i in 0..nodes {
        for j in i + 1..nodes {
            if edge_stream.random::<f64>() < block_probs[labels[i]][labels[j]] {
                edges.push((i, j));
            }
        }
    }

    let mut feature_stream = rng.stream();
    let mut features = DenseMatrix::zeros(nodes, feature_dim);
    for (i, &c) in labels.iter().enumerate() {
        for (f, x) in features.row_mut(i).iter_mut().enumerate() {
            let centroid = if f == c { CENTROID_SCALE } else { 0.0 };
            let eps: f64 = StandardNormal.sample(&mut feature_stream);
            // stored at f32 precision so the on-disk form is lossless
            *x = (centroid + noise * eps) as f32 as f64;
        }
    }
    GraphDataset::new(name, k, &edges, features, labels)
}
