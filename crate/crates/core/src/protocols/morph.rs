//! The dissimilarity-guided topology adapter.
//!
//! Each round a node trains locally, then (every `delta_r` rounds) rebuilds
//! its wanted-sender view from direct and transitively estimated
//! similarities, requests models from that view, serves accepted requesters
//! with model messages that carry similarity and peer gossip, and finally
//! averages its half-update with everything it received.

use rand::seq::index::sample;

use crate::negotiation::ConnectionRequest;
use crate::selection::{
    update_wanted_senders, CandidateScore, CandidateScores, ScoreSource, SelectionError, SelectionParams,
};
use crate::similarity::{cosine_similarity, estimate_similarity, SimilarityReport};
use crate::NodeId;

use super::{ModelMessage, NodeState, SimilarityEntry, MAX_PEER_GOSSIP, MAX_SIMILARITY_GOSSIP};

/// Knobs for the wanted-sender refresh.
#[derive(Clone, Copy, Debug)]
pub struct MorphParams {
    /// View size `s`: how many senders each node wants.
    pub view_size: usize,
    /// Dissimilarity-biased slots (`view_size - random slots`).
    pub biased_count: usize,
    /// Softmax sharpness for biased selection.
    pub beta: f64,
    /// Gossiped reports older than this many rounds are ignored.
    pub staleness_rounds: u64,
}

/// Refresh estimated similarities, rebuild the wanted-sender view, and emit
/// the round's connection requests ordered by descending dissimilarity.
pub fn reevaluate_wanted_senders(
    node: &mut NodeState,
    round: u64,
    params: &MorphParams,
) -> Result<Vec<ConnectionRequest>, SelectionError> {
    // Estimated entries are recomputed from the current history every
    // evaluation; direct measurements persist until replaced.
    let peers: Vec<NodeId> = node.known_peers.iter().copied().collect();
    for &peer in &peers {
        let direct = node
            .similarity_cache
            .get(&peer)
            .is_some_and(|e| e.source == ScoreSource::Direct);
        if direct {
            continue;
        }
        match estimate_similarity(
            &node.model,
            &node.peer_models,
            &node.history,
            peer,
            round,
            params.staleness_rounds,
        ) {
            Some(value) => {
                node.similarity_cache.insert(
                    peer,
                    SimilarityEntry {
                        value,
                        round,
                        source: ScoreSource::Estimated,
                    },
                );
            }
            None => {
                node.similarity_cache.remove(&peer);
            }
        }
    }

    let entries: Vec<CandidateScore> = peers
        .iter()
        .filter_map(|&peer| {
            node.similarity_cache.get(&peer).map(|e| CandidateScore {
                peer,
                similarity: e.value,
                source: e.source,
            })
        })
        .collect();
    let scores = CandidateScores::new(entries)?;
    let selection = SelectionParams {
        view_size: params.view_size,
        biased_count: params.biased_count,
        beta: params.beta,
    };
    let view = {
        let known = node.known_peers.clone();
        update_wanted_senders(&scores, &known, &selection, node.topo_rng())?
    };
    node.wanted_senders = view.clone();

    let mut requests: Vec<ConnectionRequest> = view
        .into_iter()
        .map(|sender| {
            let dissimilarity = node
                .similarity_cache
                .get(&sender)
                .map_or(1.0, |e| 1.0 - e.value);
            ConnectionRequest::new(node.id, sender, dissimilarity)
        })
        .collect();
    requests.sort_by(|a, b| {
        b.dissimilarity
            .total_cmp(&a.dissimilarity)
            .then(a.sender.cmp(&b.sender))
    });
    Ok(requests)
}

/// Build one outgoing model message: the half-updated model, the direct
/// similarity cache (most recent entries first, capped), and a uniform
/// sample of known peers.
pub fn make_model_message(node: &mut NodeState, round: u64) -> ModelMessage {
    let mut gossip: Vec<(NodeId, f64, u64)> = node
        .similarity_cache
        .iter()
        .filter(|(_, e)| e.source == ScoreSource::Direct)
        .map(|(&peer, e)| (peer, e.value, e.round))
        .collect();
    gossip.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    gossip.truncate(MAX_SIMILARITY_GOSSIP);

    let peers: Vec<NodeId> = node.known_peers.iter().copied().collect();
    let count = peers.len().min(MAX_PEER_GOSSIP);
    let peer_gossip: Vec<NodeId> = sample(node.topo_rng(), peers.len(), count)
        .into_iter()
        .map(|i| peers[i])
        .collect();

    ModelMessage {
        sender: node.id,
        round,
        model: node.model.clone(),
        similarity_gossip: gossip,
        peer_gossip,
    }
}

/// Ingest the round's received models: update direct similarities, record
/// gossiped reports, merge peer knowledge, stash models for estimation, and
/// average everything with the local half-update.
///
/// `messages` must be sorted by sender id (the engine's barrier guarantees
/// it), which fixes the floating-point summation order.
pub fn receive_models(node: &mut NodeState, round: u64, messages: &[ModelMessage]) -> Result<(), crate::model::ModelError> {
    debug_assert!(messages.windows(2).all(|w| w[0].sender < w[1].sender));
    for msg in messages {
        node.merge_peers(std::iter::once(msg.sender));
        node.merge_peers(msg.peer_gossip.iter().copied());

        // Direct similarity against the local half-update. A degenerate
        // layer makes the pair incomparable for this round, not an error.
        if let Ok(value) = cosine_similarity(&node.model, &msg.model) {
            node.similarity_cache.insert(
                msg.sender,
                SimilarityEntry {
                    value,
                    round,
                    source: ScoreSource::Direct,
                },
            );
        }

        for &(target, value, report_round) in &msg.similarity_gossip {
            if target == node.id || target == msg.sender {
                continue;
            }
            let report = SimilarityReport {
                round: report_round,
                reporter: msg.sender,
                value,
            };
            if node.history.record(target, report).is_err() {
                node.dropped_reports += 1;
            }
        }

        node.stash_peer_model(msg.sender, round, msg.model.clone());
    }

    let received: Vec<(NodeId, &crate::model::ModelParams)> =
        messages.iter().map(|m| (m.sender, &m.model)).collect();
    node.aggregate_uniform(&received)
}
