use rand::seq::SliceRandom;

use super::GraphDataset;
use crate::error::{GnnMoeError, Result};
use crate::rng::RngState;

/// Train / validation / test fractions.
pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.48, 0.32, 0.20);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self, num_nodes: usize) -> Result<()> {
        let mut seen = vec![false; num_nodes];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= num_nodes {
                return Err(GnnMoeError::InvalidArgument(format!("split index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(GnnMoeError::InvalidArgument(format!("node {i} appears in two splits")));
            }
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` slots proportional to
/// `weights`, never exceeding `caps`.
fn apportion(total: usize, weights: &[f64], caps: &[usize]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    let ideal: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = ideal.iter().zip(caps).map(|(x, &c)| (x.floor() as usize).min(c)).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut assigned: usize = counts.iter().sum();
    while assigned < total {
        let before = assigned;
        for &k in &order {
            if assigned < total && counts[k] < caps[k] {
                counts[k] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    counts
}

/// Per-class stratified split. Global split sizes are `round(ratio · n)`;
/// each class receives a proportional share and at least one training node.
pub fn make_splits(g: &GraphDataset, ratios: (f64, f64, f64), seed: u64) -> Result<SplitSpec> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(GnnMoeError::InvalidArgument(format!("split ratios {ratios:?} must sum to 1")));
    }
    let n = g.num_nodes();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); g.num_classes];
    for (i, &c) in g.labels.iter().enumerate() {
        by_class[c].push(i);
    }
    if let Some((c, members)) = by_class.iter().enumerate().find(|(_, m)| m.len() < 3) {
        return Err(GnnMoeError::InvalidArgument(format!(
            "class {c} has {} nodes; stratification needs at least 3",
            members.len()
        )));
    }
    let mut stream = RngState::new(seed).stream();
    for members in &mut by_class {
        members.shuffle(&mut stream);
    }

    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let n_train = (tr * n as f64).round() as usize;
    let n_val = ((va * n as f64).round() as usize).min(n - n_train);

    // one guaranteed training node per class, the rest apportioned
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let spare: Vec<usize> = sizes.iter().map(|&s| s - 1).collect();
    let extra = apportion(n_train.saturating_sub(sizes.len()), &weights, &spare);
    let train_counts: Vec<usize> = extra.iter().map(|e| e + 1).collect();
    let remaining: Vec<usize> = sizes.iter().zip(&train_counts).map(|(s, t)| s - t).collect();
    let val_counts = apportion(n_val, &weights, &remaining);

    let mut spec = SplitSpec {
        train: Vec::with_capacity(n_train),
        val: Vec::with_capacity(n_val),
        test: Vec::new(),
        seed,
    };
    for (c, members) in by_class.iter().enumerate() {
        let (t, v) = (train_counts[c], val_counts[c]);
        spec.train.extend_from_slice(&members[..t]);
        spec.val.extend_from_slice(&members[t..t + v]);
        spec.test.extend_from_slice(&members[t + v..]);
    }
    spec.train.sort_unstable();
    spec.val.sort_unstable();
    spec.test.sort_unstable();
    Ok(spec)
}
