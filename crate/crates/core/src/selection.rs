//! Dissimilarity-biased neighbor selection.
//!
//! A node's wanted-sender view combines two stages: `biased_count` peers
//! drawn sequentially without replacement from softmax weights over negated
//! similarity (more dissimilar peers are more likely), and the remaining
//! slots drawn uniformly from known peers outside the scored candidate set.
//! The uniform slots keep the union graph connected when biased edges
//! concentrate inside clusters.

use std::collections::BTreeSet;

use rand::Rng;
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no candidates remain after exclusions")]
    EmptyCandidateSet,
    #[error("candidate peers must be unique (duplicate {0})")]
    DuplicateCandidate(NodeId),
    #[error("need {need} known peers, have {have}")]
    InsufficientPeers { need: usize, have: usize },
    #[error("invalid selection params: {0}")]
    InvalidParams(String),
}

/// Where a candidate's similarity came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScoreSource {
    Direct,
    Estimated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CandidateScore {
    pub peer: NodeId,
    pub similarity: f64,
    pub source: ScoreSource,
}

/// The scored candidate set: peers with a direct or estimated similarity.
#[derive(Clone, Debug, Default)]
pub struct CandidateScores {
    entries: Vec<CandidateScore>,
}

impl CandidateScores {
    pub fn new(entries: Vec<CandidateScore>) -> Result<Self, SelectionError> {
        let mut seen = BTreeSet::new();
        for e in &entries {
            if !seen.insert(e.peer) {
                return Err(SelectionError::DuplicateCandidate(e.peer));
            }
        }
        Ok(CandidateScores { entries })
    }

    pub fn entries(&self) -> &[CandidateScore] {
        &self.entries
    }

    pub fn peers(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.entries.iter().map(|e| e.peer)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// View construction parameters: view size `s`, biased slots `k`, softmax
/// sharpness `beta`.
#[derive(Clone, Copy, Debug)]
pub struct SelectionParams {
    pub view_size: usize,
    pub biased_count: usize,
    pub beta: f64,
}

impl SelectionParams {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.view_size < 1 {
            return Err(SelectionError::InvalidParams("view_size must be >= 1".into()));
        }
        if self.biased_count > self.view_size {
            return Err(SelectionError::InvalidParams(
                "biased_count must not exceed view_size".into(),
            ));
        }
        if !(self.beta >= 0.0) {
            return Err(SelectionError::InvalidParams("beta must be >= 0".into()));
        }
        Ok(())
    }
}

/// Max-shifted softmax over `-beta * sims[i]` restricted to unmasked indices.
/// Returns probabilities aligned with `sims` (zero at masked indices), or
/// `None` when everything is masked.
fn softmax_masked(sims: &[f64], masked: &[bool], beta: f64) -> Option<Vec<f64>> {
    let mut max_logit = f64::NEG_INFINITY;
    for (i, &sim) in sims.iter().enumerate() {
        if !masked[i] {
            max_logit = max_logit.max(-beta * sim);
        }
    }
    if max_logit == f64::NEG_INFINITY {
        return None;
    }
    let mut weights = vec![0.0; sims.len()];
    let mut total = 0.0;
    for (i, &sim) in sims.iter().enumerate() {
        if !masked[i] {
            let w = (-beta * sim - max_logit).exp();
            weights[i] = w;
            total += w;
        }
    }
    for w in &mut weights {
        *w /= total;
    }
    Some(weights)
}

/// Selection probabilities over the candidates not in `excluded`:
/// `p_j = exp(-beta*sim_j) / sum_i exp(-beta*sim_i)`, computed with a
/// max-shift so large `beta` cannot overflow. Returned in candidate order.
pub fn softmax_weights(
    scores: &CandidateScores,
    excluded: &BTreeSet<NodeId>,
    beta: f64,
) -> Result<Vec<(NodeId, f64)>, SelectionError> {
    let sims: Vec<f64> = scores.entries.iter().map(|e| e.similarity).collect();
    let masked: Vec<bool> = scores.entries.iter().map(|e| excluded.contains(&e.peer)).collect();
    let probs = softmax_masked(&sims, &masked, beta).ok_or(SelectionError::EmptyCandidateSet)?;
    Ok(scores
        .entries
        .iter()
        .zip(probs)
        .filter(|(e, _)| !excluded.contains(&e.peer))
        .map(|(e, p)| (e.peer, p))
        .collect())
}

/// Sequential softmax sampling without replacement over similarity values:
/// draw one index from the softmax over the remainder, remove it,
/// renormalize, repeat. Removing the drawn weight from the unnormalized
/// total is exactly that renormalization, so the exponentials are computed
/// once. Returns at most `k` indices (all of them when fewer exist), in
/// draw order.
pub fn sample_biased_indices<R: Rng>(sims: &[f64], k: usize, beta: f64, rng: &mut R) -> Vec<usize> {
    if sims.is_empty() || k == 0 {
        return Vec::new();
    }
    let max_logit = sims.iter().map(|&s| -beta * s).fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = sims.iter().map(|&s| (-beta * s - max_logit).exp()).collect();
    let mut total: f64 = weights.iter().sum();

    let mut picked = Vec::with_capacity(k.min(sims.len()));
    while picked.len() < k.min(sims.len()) && total > 0.0 {
        let u: f64 = rng.random();
        let threshold = u * total;
        let mut cumulative = 0.0;
        let mut chosen = None;
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            cumulative += w;
            if threshold < cumulative {
                chosen = Some(i);
                break;
            }
        }
        // Float round-off can leave the threshold above the sum.
        let i = chosen.unwrap_or_else(|| {
            weights
                .iter()
                .rposition(|&w| w > 0.0)
                .expect("total > 0 implies a live weight")
        });
        total -= weights[i];
        weights[i] = 0.0;
        picked.push(i);
    }
    // Weights this far below the maximum underflow to zero; fall back to
    // uniform draws over the remainder so the requested count is met.
    while picked.len() < k.min(sims.len()) {
        let remaining: Vec<usize> = (0..sims.len()).filter(|i| !picked.contains(i)).collect();
        let i = remaining[rng.random_range(0..remaining.len())];
        picked.push(i);
    }
    picked
}

/// [`sample_biased_indices`] over a scored candidate set, returning peer ids.
pub fn sample_biased<R: Rng>(scores: &CandidateScores, k: usize, beta: f64, rng: &mut R) -> Vec<NodeId> {
    let sims: Vec<f64> = scores.entries.iter().map(|e| e.similarity).collect();
    sample_biased_indices(&sims, k, beta, rng)
        .into_iter()
        .map(|i| scores.entries[i].peer)
        .collect()
}

/// Build the wanted-sender view: `biased_count` softmax draws from the scored
/// candidates plus uniform draws from the unscored known peers.
///
/// The uniform stage draws from `all_known` minus the scored candidate set;
/// when that pool is too small it falls back to `all_known` minus the biased
/// picks. When fewer scored candidates exist than biased slots, the uniform
/// stage expands to keep the view at exactly `view_size`.
pub fn update_wanted_senders<R: Rng>(
    scores: &CandidateScores,
    all_known: &BTreeSet<NodeId>,
    params: &SelectionParams,
    rng: &mut R,
) -> Result<Vec<NodeId>, SelectionError> {
    params.validate()?;
    if all_known.len() < params.view_size {
        return Err(SelectionError::InsufficientPeers {
            need: params.view_size,
            have: all_known.len(),
        });
    }
    debug_assert!(
        scores.peers().all(|p| all_known.contains(&p)),
        "scored candidates must be known peers"
    );

    let biased = sample_biased(scores, params.biased_count, params.beta, rng);
    let biased_set: BTreeSet<NodeId> = biased.iter().copied().collect();
    let need = params.view_size - biased.len();

    let scored_set: BTreeSet<NodeId> = scores.peers().collect();
    let primary: Vec<NodeId> = all_known.difference(&scored_set).copied().collect();
    let pool: Vec<NodeId> = if primary.len() >= need {
        primary
    } else {
        all_known.difference(&biased_set).copied().collect()
    };
    debug_assert!(pool.len() >= need);

    let mut view = biased;
    for idx in rand::seq::index::sample(rng, pool.len(), need) {
        view.push(pool[idx]);
    }
    Ok(view)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::BTreeMap;

    fn scores_from(sims: &[f64]) -> CandidateScores {
        CandidateScores::new(
            sims.iter()
                .enumerate()
                .map(|(i, &similarity)| CandidateScore {
                    peer: i + 10,
                    similarity,
                    source: ScoreSource::Direct,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_beta_is_uniform() {
        let scores = scores_from(&[0.9, -0.3, 0.1, 0.5]);
        let weights = softmax_weights(&scores, &BTreeSet::new(), 0.0).unwrap();
        for (_, p) in &weights {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn two_candidate_closed_form() {
        let scores = scores_from(&[0.2, 0.8]);
        let weights = softmax_weights(&scores, &BTreeSet::new(), 1.0).unwrap();
        let expected = (-0.2f64).exp() / ((-0.2f64).exp() + (-0.8f64).exp());
        assert!((weights[0].1 - expected).abs() < 1e-12);
        assert!((weights[0].1 + weights[1].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sharp_beta_concentrates_on_most_dissimilar() {
        let scores = scores_from(&[-1.0, 1.0]);
        let weights = softmax_weights(&scores, &BTreeSet::new(), 500.0).unwrap();
        assert!(weights[0].1 > 1.0 - 1e-12);
        assert!(weights.iter().map(|(_, p)| p).sum::<f64>() <= 1.0 + 1e-9);
    }

    #[test]
    fn exclusions_renormalize() {
        let scores = scores_from(&[0.1, 0.2, 0.3]);
        let mut excluded = BTreeSet::new();
        excluded.insert(10);
        let weights = softmax_weights(&scores, &excluded, 1.0).unwrap();
        assert_eq!(weights.len(), 2);
        let total: f64 = weights.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn all_excluded_is_an_error() {
        let scores = scores_from(&[0.1]);
        let excluded: BTreeSet<NodeId> = [10].into_iter().collect();
        assert!(matches!(
            softmax_weights(&scores, &excluded, 1.0),
            Err(SelectionError::EmptyCandidateSet)
        ));
        assert!(matches!(
            softmax_weights(&CandidateScores::default(), &BTreeSet::new(), 1.0),
            Err(SelectionError::EmptyCandidateSet)
        ));
    }

    #[test]
    fn duplicate_candidates_rejected() {
        let entries = vec![
            CandidateScore {
                peer: 3,
                similarity: 0.1,
                source: ScoreSource::Direct,
            },
            CandidateScore {
                peer: 3,
                similarity: 0.2,
                source: ScoreSource::Estimated,
            },
        ];
        assert!(matches!(
            CandidateScores::new(entries),
            Err(SelectionError::DuplicateCandidate(3))
        ));
    }

    #[test]
    fn monotone_in_dissimilarity() {
        let mut rng = derive_rng(3, 0, "monotone");
        for _ in 0..200 {
            let sims: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let beta: f64 = rng.random_range(0.1..50.0);
            let scores = scores_from(&sims);
            let weights = softmax_weights(&scores, &BTreeSet::new(), beta).unwrap();
            for i in 0..sims.len() {
                for j in 0..sims.len() {
                    if sims[i] < sims[j] {
                        assert!(
                            weights[i].1 > weights[j].1,
                            "sim {} < {} must imply p {} > {}",
                            sims[i],
                            sims[j],
                            weights[i].1,
                            weights[j].1
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn exhausting_candidates_returns_all() {
        let scores = scores_from(&[0.4, -0.2, 0.9]);
        let mut rng = derive_rng(4, 0, "exhaust");
        let mut picked = sample_biased(&scores, 3, 2.0, &mut rng);
        picked.sort_unstable();
        assert_eq!(picked, vec![10, 11, 12]);
        // Asking for more than exist still returns everything once.
        let mut rng = derive_rng(4, 1, "exhaust");
        assert_eq!(sample_biased(&scores, 7, 2.0, &mut rng).len(), 3);
    }

    #[test]
    fn sharp_sampling_prefers_most_dissimilar() {
        let mut sims = vec![0.9; 10];
        sims[0] = 0.0;
        let scores = scores_from(&sims);
        let mut hits = 0u32;
        let trials = 10_000;
        for seed in 0..trials {
            let mut rng = derive_rng(seed, 0, "sharp-mc");
            let picked = sample_biased(&scores, 1, 500.0, &mut rng);
            if picked == [10] {
                hits += 1;
            }
        }
        let rate = f64::from(hits) / trials as f64;
        assert!(rate > 0.999, "most-dissimilar pick rate {rate} too low");
    }

    #[test]
    fn zero_beta_pairs_are_uniform_without_replacement() {
        let scores = scores_from(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let mut counts: BTreeMap<(NodeId, NodeId), u32> = BTreeMap::new();
        let trials = 100_000;
        for seed in 0..trials {
            let mut rng = derive_rng(seed, 0, "pair-mc");
            let mut pair = sample_biased(&scores, 2, 0.0, &mut rng);
            pair.sort_unstable();
            *counts.entry((pair[0], pair[1])).or_default() += 1;
        }
        assert_eq!(counts.len(), 10, "all 10 unordered pairs should appear");
        for (&pair, &count) in &counts {
            let freq = count as f64 / trials as f64;
            assert!(
                (freq - 0.1).abs() < 0.01,
                "pair {pair:?} frequency {freq} outside 0.1 +- 0.01"
            );
        }
    }

    fn known_peers(n: usize) -> BTreeSet<NodeId> {
        (0..n).collect()
    }

    #[test]
    fn biased_only_view_equals_biased_sample() {
        let scores = CandidateScores::new(
            (0..5)
                .map(|peer| CandidateScore {
                    peer,
                    similarity: peer as f64 / 5.0,
                    source: ScoreSource::Direct,
                })
                .collect(),
        )
        .unwrap();
        let params = SelectionParams {
            view_size: 3,
            biased_count: 3,
            beta: 2.0,
        };
        let known = known_peers(5);
        let view = update_wanted_senders(&scores, &known, &params, &mut derive_rng(9, 0, "v")).unwrap();
        let direct = sample_biased(&scores, 3, 2.0, &mut derive_rng(9, 0, "v"));
        assert_eq!(view, direct);
    }

    #[test]
    fn view_size_is_exact_and_self_free() {
        let mut rng = derive_rng(12, 0, "view");
        for trial in 0..100 {
            let known = known_peers(20);
            let scored: Vec<CandidateScore> = (0..(trial % 7))
                .map(|peer| CandidateScore {
                    peer,
                    similarity: rng.random_range(-1.0..1.0),
                    source: ScoreSource::Estimated,
                })
                .collect();
            let scores = CandidateScores::new(scored).unwrap();
            let params = SelectionParams {
                view_size: 5,
                biased_count: 3.min(scores.len()),
                beta: 10.0,
            };
            let view = update_wanted_senders(&scores, &known, &params, &mut rng).unwrap();
            assert_eq!(view.len(), 5);
            let unique: BTreeSet<NodeId> = view.iter().copied().collect();
            assert_eq!(unique.len(), 5, "view has duplicates: {view:?}");
            assert!(view.iter().all(|p| known.contains(p)));
        }
    }

    #[test]
    fn too_few_known_peers_is_an_error() {
        let params = SelectionParams {
            view_size: 5,
            biased_count: 2,
            beta: 1.0,
        };
        let known = known_peers(4);
        assert!(matches!(
            update_wanted_senders(&CandidateScores::default(), &known, &params, &mut derive_rng(1, 0, "e")),
            Err(SelectionError::InsufficientPeers { need: 5, have: 4 })
        ));
    }

    #[test]
    fn views_are_deterministic_per_seed() {
        let scores = scores_from(&[0.5, -0.5, 0.0]);
        let known: BTreeSet<NodeId> = (0..30).chain([10, 11, 12]).collect();
        let params = SelectionParams {
            view_size: 4,
            biased_count: 2,
            beta: 5.0,
        };
        let a = update_wanted_senders(&scores, &known, &params, &mut derive_rng(5, 3, "det")).unwrap();
        let b = update_wanted_senders(&scores, &known, &params, &mut derive_rng(5, 3, "det")).unwrap();
        assert_eq!(a, b);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // At beta = 500 similarities within one unit of each other keep
            // every exponential above f64 underflow, which is the regime the
            // sharpness setting is used in.
            #[test]
            fn softmax_is_a_strictly_positive_simplex_point(
                sims in proptest::collection::vec(0.0f64..1.0, 1..12),
                beta_index in 0usize..4,
            ) {
                let beta = [0.0, 1.0, 10.0, 500.0][beta_index];
                let scores = scores_from(&sims);
                let weights = softmax_weights(&scores, &BTreeSet::new(), beta).unwrap();
                let total: f64 = weights.iter().map(|(_, p)| p).sum();
                prop_assert!((total - 1.0).abs() < 1e-9, "sum {}", total);
                for &(_, p) in &weights {
                    prop_assert!(p > 0.0 && p <= 1.0, "probability {}", p);
                }
            }

            #[test]
            fn views_are_exact_unique_subsets(
                known_size in 4usize..30,
                scored in 0usize..8,
                view_size in 1usize..4,
                seed in 0u64..500,
            ) {
                let view_size = view_size.min(known_size - 1);
                let known: BTreeSet<NodeId> = (0..known_size).collect();
                let scored: Vec<CandidateScore> = (0..scored.min(known_size))
                    .map(|peer| CandidateScore {
                        peer,
                        similarity: (peer as f64 / 8.0) - 0.5,
                        source: ScoreSource::Direct,
                    })
                    .collect();
                let scores = CandidateScores::new(scored).unwrap();
                let params = SelectionParams {
                    view_size,
                    biased_count: view_size.min(2),
                    beta: 5.0,
                };
                let view =
                    update_wanted_senders(&scores, &known, &params, &mut derive_rng(seed, 0, "prop")).unwrap();
                prop_assert_eq!(view.len(), view_size);
                let unique: BTreeSet<NodeId> = view.iter().copied().collect();
                prop_assert_eq!(unique.len(), view_size);
                prop_assert!(view.iter().all(|p| known.contains(p)));
            }
        }
    }

    #[test]
    fn random_stage_is_uniform_chi_square() {
        // No scored candidates, so all three slots come from the uniform
        // stage over 100 known peers.
        let known = known_peers(100);
        let params = SelectionParams {
            view_size: 3,
            biased_count: 1,
            beta: 500.0,
        };
        let mut counts = vec![0u64; 100];
        let seeds = 5000;
        for seed in 0..seeds {
            let view =
                update_wanted_senders(&CandidateScores::default(), &known, &params, &mut derive_rng(seed, 0, "chi"))
                    .unwrap();
            assert_eq!(view.len(), 3);
            for p in view {
                counts[p] += 1;
            }
        }
        let expected = (seeds * 3) as f64 / 100.0;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let p_value = 1.0 - ChiSquared::new(99.0).unwrap().cdf(stat);
        assert!(p_value > 0.01, "chi-square stat {stat}, p {p_value}");
    }
}
