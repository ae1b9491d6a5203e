use super::GraphDataset;

/// Fraction of each node's neighbors that share its label; `None` for
/// isolated nodes.
pub fn node_homophily(g: &GraphDataset) -> Vec<Option<f64>> {
    (0..g.num_nodes())
        .map(|i| {
            let nbrs = g.neighbors(i);
            if nbrs.is_empty() {
                return None;
            }
            let same = nbrs.iter().filter(|&&j| g.labels[j] == g.labels[i]).count();
            Some(same as f64 / nbrs.len() as f64)
        })
        .collect()
}

/// Nodes bucketed by (homophily bin, degree bin). Homophily bins are
/// equal-width over [0, 1]; degree bins are quantiles of the degrees of
/// non-isolated nodes.
#[derive(Clone, Debug)]
pub struct HomophilyProfile {
    pub homophily: Vec<Option<f64>>,
    pub degree: Vec<usize>,
    /// `(homophily_bin, degree_bin)`; `None` exactly for isolated nodes.
    pub subspace: Vec<Option<(usize, usize)>>,
    pub homophily_bins: usize,
    pub degree_bins: usize,
    /// Lower degree bound of each degree bin, plus an exclusive upper bound.
    pub degree_edges: Vec<usize>,
}

impl HomophilyProfile {
    pub fn homophily_bounds(&self, bin: usize) -> (f64, f64) {
        let k = self.homophily_bins as f64;
        (bin as f64 / k, (bin + 1) as f64 / k)
    }

    pub fn degree_bounds(&self, bin: usize) -> (usize, usize) {
        (self.degree_edges[bin], self.degree_edges[bin + 1])
    }

    /// Nodes in subspace `(h, d)`.
    pub fn members(&self, h: usize, d: usize) -> Vec<usize> {
        (0..self.subspace.len()).filter(|&i| self.subspace[i] == Some((h, d))).collect()
    }
}

pub fn homophily_bin(h: f64, bins: usize) -> usize {
    ((h * bins as f64).floor() as usize).min(bins - 1)
}

pub fn partition_subspaces(g: &GraphDataset, homophily_bins: usize, degree_bins: usize) -> HomophilyProfile {
    let homophily_bins = homophily_bins.max(1);
    let degree_bins = degree_bins.max(1);
    let homophily = node_homophily(g);
    let degree: Vec<usize> = (0..g.num_nodes()).map(|i| g.degree(i)).collect();

    let mut sorted: Vec<usize> = degree.iter().copied().filter(|&d| d > 0).collect();
    sorted.sort_unstable();
    let mut degree_edges = Vec::with_capacity(degree_bins + 1);
    if sorted.is_empty() {
        degree_edges.extend(std::iter::repeat_n(0, degree_bins + 1));
    } else {
        degree_edges.push(sorted[0]);
        for k in 1..degree_bins {
            let last = *degree_edges.last().unwrap();
            let mut q = sorted[k * sorted.len() / degree_bins];
            if q <= last {
                // ties at the quantile: start the bin at the next distinct degree
                q = sorted.iter().copied().find(|&d| d > last).unwrap_or(sorted[sorted.len() - 1] + 1);
            }
            degree_edges.push(q);
        }
        degree_edges.push(sorted[sorted.len() - 1] + 1);
    }
    let degree_bin = |d: usize| {
        // last bin whose lower edge is <= d
        (0..degree_bins).rev().find(|&b| degree_edges[b] <= d).unwrap_or(0)
    };

    let subspace = homophily
        .iter()
        .zip(&degree)
        .map(|(h, &d)| h.map(|h| (homophily_bin(h, homophily_bins), degree_bin(d))))
        .collect();
    HomophilyProfile {
        homophily,
        degree,
        subspace,
        homophily_bins,
        degree_bins,
        degree_edges,
    }
}
