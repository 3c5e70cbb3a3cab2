//! Epidemic learning baseline: after the local step, every node pushes its
//! half-updated model to `k` peers and averages whatever it received. Peer
//! choice is uniform, so nothing guarantees an incoming model — nodes can be
//! isolated for a round.

use rand::seq::index::sample;

use crate::NodeId;

use super::NodeState;

/// Pick `k` distinct peers uniformly from `[0, n) \ {self}`.
///
/// With the local variant every node draws from its own stream; the oracle
/// variant (a round-global k-regular draw) is built by the engine instead.
pub fn pick_push_targets(node: &mut NodeState, n: usize, k: usize) -> Vec<NodeId> {
    debug_assert!(node.id < n);
    let id = node.id;
    let k = k.min(n - 1);
    sample(node.topo_rng(), n - 1, k)
        .into_iter()
        .map(|i| if i >= id { i + 1 } else { i })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_dataset;
    use crate::model::ModelParams;
    use std::collections::BTreeSet;

    fn node(id: NodeId) -> NodeState {
        let shard = generate_synthetic_dataset(2, 4, 2, 0.2, id as u64).unwrap();
        let model = ModelParams::new(vec![("weights", vec![1.0, 0.0]), ("bias", vec![0.1])]);
        NodeState::new(id, model, shard, BTreeSet::new(), Vec::new(), 11)
    }

    #[test]
    fn targets_are_distinct_and_never_self() {
        for id in [0, 3, 9] {
            let mut n = node(id);
            for _ in 0..50 {
                let targets = pick_push_targets(&mut n, 10, 3);
                assert_eq!(targets.len(), 3);
                let unique: BTreeSet<NodeId> = targets.iter().copied().collect();
                assert_eq!(unique.len(), 3);
                assert!(!unique.contains(&id));
                assert!(unique.iter().all(|&t| t < 10));
            }
        }
    }

    #[test]
    fn k_zero_sends_nothing() {
        let mut n = node(0);
        assert!(pick_push_targets(&mut n, 10, 0).is_empty());
    }

    #[test]
    fn k_capped_at_everyone_else() {
        let mut n = node(2);
        let mut targets = pick_push_targets(&mut n, 5, 99);
        targets.sort_unstable();
        assert_eq!(targets, vec![0, 1, 3, 4]);
    }

    #[test]
    fn in_degree_distribution_is_binomial_shaped() {
        // Each node receives Binomial(n-1, k/(n-1)) models per round: the
        // mean is exactly k by edge conservation, the variance close to
        // (n-1)p(1-p).
        let n = 100;
        let k = 3;
        let mut nodes: Vec<NodeState> = (0..n).map(node).collect();
        let rounds = 2000;
        let mut in_degrees: Vec<u64> = vec![0; n];
        let mut sq_sum = 0.0;
        for _ in 0..rounds {
            let mut per_round = vec![0u32; n];
            for node in nodes.iter_mut() {
                for t in pick_push_targets(node, n, k) {
                    per_round[t] += 1;
                }
            }
            for (total, &r) in in_degrees.iter_mut().zip(&per_round) {
                *total += u64::from(r);
                sq_sum += f64::from(r) * f64::from(r);
            }
        }
        let samples = (n * rounds) as f64;
        let mean = in_degrees.iter().sum::<u64>() as f64 / samples;
        assert!((mean - k as f64).abs() < 0.1, "mean in-degree {mean}");
        let var = sq_sum / samples - mean * mean;
        let p = k as f64 / (n - 1) as f64;
        let expected_var = (n - 1) as f64 * p * (1.0 - p);
        assert!(
            (var - expected_var).abs() < 0.2,
            "in-degree variance {var} vs binomial {expected_var}"
        );
    }
}
