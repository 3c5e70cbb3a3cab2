//! Static-topology baseline with Metropolis-Hastings averaging.
//!
//! Nodes exchange models with fixed neighbors every round and mix with
//! weights `W_ij = 1 / (1 + max(d_i, d_j))`, `W_ii = 1 - sum_j W_ij`, which
//! makes the mixing matrix symmetric and doubly stochastic on any undirected
//! graph.

use std::collections::BTreeSet;

use crate::model::{ModelError, ModelParams};
use crate::NodeId;

/// Metropolis-Hastings weight for an edge between nodes of the given degrees.
pub fn mh_edge_weight(degree_a: usize, degree_b: usize) -> f64 {
    1.0 / (1.0 + degree_a.max(degree_b) as f64)
}

/// The full mixing matrix for an undirected adjacency, mostly for checking
/// the doubly-stochastic property.
pub fn mh_weight_matrix(adjacency: &[BTreeSet<NodeId>]) -> Vec<Vec<f64>> {
    let n = adjacency.len();
    let degrees: Vec<usize> = adjacency.iter().map(BTreeSet::len).collect();
    let mut matrix = vec![vec![0.0; n]; n];
    for (i, neighbors) in adjacency.iter().enumerate() {
        let mut off_diagonal = 0.0;
        for &j in neighbors {
            let w = mh_edge_weight(degrees[i], degrees[j]);
            matrix[i][j] = w;
            off_diagonal += w;
        }
        matrix[i][i] = 1.0 - off_diagonal;
    }
    matrix
}

/// Mix the local half-update with neighbor models:
/// `x_i <- W_ii x_i + sum_j W_ij x_j`, neighbors in ascending id order.
pub fn mh_aggregate(
    node_id: NodeId,
    own: &ModelParams,
    neighbor_models: &[(NodeId, &ModelParams)],
    degrees: &[usize],
) -> Result<ModelParams, ModelError> {
    debug_assert!(neighbor_models.windows(2).all(|w| w[0].0 < w[1].0));
    let mut mixed = own.zeros_like();
    let mut self_weight = 1.0;
    for &(j, model) in neighbor_models {
        if !own.shape_matches(model) {
            return Err(ModelError::ShapeMismatch(
                "neighbor model shape differs from own".into(),
            ));
        }
        let w = mh_edge_weight(degrees[node_id], degrees[j]);
        mixed.add_scaled(model, w);
        self_weight -= w;
    }
    mixed.add_scaled(own, self_weight);
    Ok(mixed)
}
