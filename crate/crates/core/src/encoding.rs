//! Laplacian positional encodings for nodes and links, and assembly of the
//! model input feature matrix.
//!
//! Node coordinates come from the eigenvectors of the normalized graph
//! Laplacian `L = I - D^{-1/2} A D^{-1/2}`: the `m` smallest non-trivial
//! eigenvectors place topologically close nodes at nearby coordinates.
//! Eigenvector sign and degenerate-eigenvalue ordering are both fixed so the
//! encoding is a deterministic function of the graph.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::datagen::Snapshot;
use crate::grid::{Carrier, Network};

/// Eigenvalues below this are treated as the trivial (constant) eigenspace.
const TRIVIAL_EIGENVALUE_TOL: f64 = 1e-9;
/// Entries below this are skipped when picking the sign-fixing pivot.
const SIGN_PIVOT_TOL: f64 = 1e-10;

/// Number of per-node state features ahead of the positional columns:
/// normalized demand, eta_wind, eta_solar.
pub const NODE_STATE_FEATURES: usize = 3;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("requested {m} positional components but only {max} non-trivial eigenvectors exist")]
    TooManyComponents { m: usize, max: usize },
    #[error("node {node_idx} has zero degree; Laplacian normalization undefined")]
    ZeroDegreeNode { node_idx: usize },
    #[error("demand_max has {got} entries, network has {want} nodes")]
    DemandMaxShape { got: usize, want: usize },
    #[error("demand_max must be strictly positive at every node (node {node_idx} is {value})")]
    DemandMaxNonPositive { node_idx: usize, value: f64 },
}

/// Positional encoding of the nodes: an `N x m` matrix whose columns are
/// sign-fixed eigenvectors of the normalized Laplacian, orthonormal within
/// 1e-8, paired with the eigenvalues they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEncoding {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

impl NodeEncoding {
    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Positional coordinates of one node.
    pub fn node_row(&self, node_idx: usize) -> Vec<f64> {
        (0..self.dim()).map(|c| self.matrix[(node_idx, c)]).collect()
    }
}

/// Model input: an `F x N` matrix with one column per node. Rows are the
/// normalized demand, eta_wind, eta_solar, then the positional coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub h: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn n_features(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.h.ncols()
    }

    pub fn node_column(&self, node_idx: usize) -> Vec<f64> {
        (0..self.h.nrows()).map(|r| self.h[(r, node_idx)]).collect()
    }
}

/// Normalized Laplacian `I - D^{-1/2} A D^{-1/2}` of a connected network.
pub fn normalized_laplacian(network: &Network) -> Result<DMatrix<f64>, EncodingError> {
    let a = network.adjacency();
    let n = a.nrows();
    let mut inv_sqrt_deg = DVector::zeros(n);
    for i in 0..n {
        let deg: f64 = a.row(i).sum();
        if deg <= 0.0 {
            if n == 1 {
                // A single isolated node has an empty Laplacian spectrum to
                // offer; callers need at least two nodes for encodings.
                return Err(EncodingError::ZeroDegreeNode { node_idx: i });
            }
            return Err(EncodingError::ZeroDegreeNode { node_idx: i });
        }
        inv_sqrt_deg[i] = 1.0 / deg.sqrt();
    }
    let mut lap = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                lap[(i, j)] -= inv_sqrt_deg[i] * a[(i, j)] * inv_sqrt_deg[j];
            }
        }
    }
    Ok(lap)
}

/// Laplacian positional encoding: the `m` smallest non-trivial eigenvectors,
/// sign-fixed and deterministically ordered.
pub fn node_lpe(network: &Network, m: usize) -> Result<NodeEncoding, EncodingError> {
    let lap = normalized_laplacian(network)?;
    let n = lap.nrows();
    if m + 1 > n {
        return Err(EncodingError::TooManyComponents { m, max: n.saturating_sub(1) });
    }

    let eig = SymmetricEigen::new(lap);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    // Skip the trivial eigenspace (eigenvalue ~ 0; exactly one for a
    // connected graph), then take the next m columns.
    let mut selected: Vec<(f64, Vec<f64>)> = Vec::with_capacity(m);
    for &idx in &order {
        let lambda = eig.eigenvalues[idx];
        if lambda.abs() <= TRIVIAL_EIGENVALUE_TOL {
            continue;
        }
        if selected.len() == m {
            break;
        }
        let mut col: Vec<f64> = (0..n).map(|r| eig.eigenvectors[(r, idx)]).collect();
        sign_fix(&mut col);
        selected.push((lambda, col));
    }
    if selected.len() < m {
        return Err(EncodingError::TooManyComponents { m, max: selected.len() });
    }

    // Within a degenerate eigenvalue group the eigensolver's basis order is
    // arbitrary; order members lexicographically over their sign-fixed
    // entries so the encoding is reproducible.
    let mut start = 0;
    while start < selected.len() {
        let lambda = selected[start].0;
        let mut end = start + 1;
        while end < selected.len()
            && (selected[end].0 - lambda).abs() <= 1e-9 * (1.0 + lambda.abs())
        {
            end += 1;
        }
        selected[start..end].sort_by(|a, b| {
            for (x, y) in a.1.iter().zip(b.1.iter()) {
                match x.total_cmp(y) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        });
        start = end;
    }

    let mut matrix = DMatrix::zeros(n, m);
    let mut eigenvalues = Vec::with_capacity(m);
    for (c, (lambda, col)) in selected.into_iter().enumerate() {
        for (r, v) in col.into_iter().enumerate() {
            matrix[(r, c)] = v;
        }
        eigenvalues.push(lambda);
    }
    Ok(NodeEncoding { matrix, eigenvalues })
}

fn sign_fix(col: &mut [f64]) {
    for &v in col.iter() {
        if v.abs() > SIGN_PIVOT_TOL {
            if v < 0.0 {
                for x in col.iter_mut() {
                    *x = -*x;
                }
            }
            return;
        }
    }
}

/// Link positional encoding: column `l` is the from-node encoding stacked on
/// the to-node encoding, giving a `2m x L` matrix.
pub fn link_pe(encoding: &NodeEncoding, network: &Network) -> DMatrix<f64> {
    let m = encoding.dim();
    let n_links = network.n_links();
    let mut p = DMatrix::zeros(2 * m, n_links);
    for l in 0..n_links {
        let (from, to) = network.link_endpoints(l);
        for c in 0..m {
            p[(c, l)] = encoding.matrix[(from, c)];
            p[(m + c, l)] = encoding.matrix[(to, c)];
        }
    }
    p
}

/// Assembles the `F x N` input features for one snapshot: normalized demand,
/// weather coefficients (zeroed where the node has no generator of that
/// carrier), then the transposed node encoding.
pub fn build_features(
    network: &Network,
    snapshot: &Snapshot,
    demand_max: &[f64],
    encoding: &NodeEncoding,
) -> Result<FeatureMatrix, EncodingError> {
    let n = network.n_nodes();
    if demand_max.len() != n {
        return Err(EncodingError::DemandMaxShape { got: demand_max.len(), want: n });
    }
    for (j, &d) in demand_max.iter().enumerate() {
        if !(d > 0.0) {
            return Err(EncodingError::DemandMaxNonPositive { node_idx: j, value: d });
        }
    }

    let m = encoding.dim();
    let mut h = DMatrix::zeros(NODE_STATE_FEATURES + m, n);
    for j in 0..n {
        h[(0, j)] = snapshot.demand[j] / demand_max[j];
        let mut has_wind = false;
        let mut has_solar = false;
        for &gi in network.generators_at(j) {
            match network.generators()[gi].carrier {
                Carrier::Wind => has_wind = true,
                Carrier::Solar => has_solar = true,
                _ => {}
            }
        }
        h[(1, j)] = if has_wind { snapshot.eta_wind[j] } else { 0.0 };
        h[(2, j)] = if has_solar { snapshot.eta_solar[j] } else { 0.0 };
        for c in 0..m {
            h[(NODE_STATE_FEATURES + c, j)] = encoding.matrix[(j, c)];
        }
    }
    Ok(FeatureMatrix { h })
}
