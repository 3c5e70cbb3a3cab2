//! Per-node protocol logic for the four algorithms: the dissimilarity-guided
//! topology adapter (morph), epidemic learning, static Metropolis-Hastings,
//! and the fully connected upper bound.
//!
//! Nodes own all of their state; the engine moves value-type messages between
//! them at synchronous round barriers, so node steps can run in parallel.

pub mod epidemic;
pub mod morph;
pub mod static_mh;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::model::{mean_of, local_sgd_step, ModelArch, ModelError, ModelParams};
use crate::rng::derive_rng;
use crate::selection::ScoreSource;
use crate::similarity::SimilarityHistory;
use crate::NodeId;

/// Cap on similarity entries gossiped per model message.
pub const MAX_SIMILARITY_GOSSIP: usize = 64;
/// Cap on peer ids gossiped per model message.
pub const MAX_PEER_GOSSIP: usize = 16;
/// Cap on stashed peer models used for transitive similarity estimation.
pub const MAX_CACHED_PEER_MODELS: usize = 64;

/// A cached similarity to one peer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityEntry {
    pub value: f64,
    pub round: u64,
    pub source: ScoreSource,
}

/// One model exchange: the sender's half-updated model plus bounded gossip.
#[derive(Clone, Debug)]
pub struct ModelMessage {
    pub sender: NodeId,
    pub round: u64,
    pub model: ModelParams,
    /// The sender's direct-similarity cache as `(peer, value, round)` tuples.
    pub similarity_gossip: Vec<(NodeId, f64, u64)>,
    /// A uniform sample of the sender's known peers.
    pub peer_gossip: Vec<NodeId>,
}

impl ModelMessage {
    /// Bytes this message contributes under the documented accounting model:
    /// 4 bytes per model parameter, 12 per gossip entry.
    pub fn accounted_bytes(&self) -> u64 {
        4 * self.model.param_count() as u64
            + 12 * (self.similarity_gossip.len() + self.peer_gossip.len()) as u64
    }
}

/// One protocol participant.
pub struct NodeState {
    pub id: NodeId,
    pub model: ModelParams,
    pub known_peers: BTreeSet<NodeId>,
    pub wanted_senders: Vec<NodeId>,
    pub similarity_cache: BTreeMap<NodeId, SimilarityEntry>,
    pub history: SimilarityHistory,
    /// Most recent model received per peer, with the round it arrived.
    pub peer_models: BTreeMap<NodeId, ModelParams>,
    pub peer_model_rounds: BTreeMap<NodeId, u64>,
    pub shard: Dataset,
    /// Malformed gossip entries dropped on receipt.
    pub dropped_reports: u64,
    train_rng: ChaCha8Rng,
    topo_rng: ChaCha8Rng,
    batch_order: Vec<usize>,
    batch_cursor: usize,
}

impl NodeState {
    pub fn new(
        id: NodeId,
        model: ModelParams,
        shard: Dataset,
        known_peers: BTreeSet<NodeId>,
        wanted_senders: Vec<NodeId>,
        experiment_seed: u64,
    ) -> Self {
        debug_assert!(!known_peers.contains(&id));
        let mut train_rng = derive_rng(experiment_seed, id as u64, "train");
        let mut batch_order: Vec<usize> = (0..shard.len()).collect();
        batch_order.shuffle(&mut train_rng);
        NodeState {
            id,
            model,
            known_peers,
            wanted_senders,
            similarity_cache: BTreeMap::new(),
            history: SimilarityHistory::new(),
            peer_models: BTreeMap::new(),
            peer_model_rounds: BTreeMap::new(),
            shard,
            dropped_reports: 0,
            train_rng,
            topo_rng: derive_rng(experiment_seed, id as u64, "topo"),
            batch_order,
            batch_cursor: 0,
        }
    }

    pub(crate) fn topo_rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.topo_rng
    }

    /// Next minibatch indices: sampled without replacement, reshuffling once
    /// an epoch's worth has been consumed. Batches never span epochs.
    fn next_batch_indices(&mut self, batch_size: usize) -> Vec<usize> {
        let take = batch_size.min(self.shard.len());
        if self.batch_cursor + take > self.batch_order.len() {
            self.batch_order.shuffle(&mut self.train_rng);
            self.batch_cursor = 0;
        }
        let batch = self.batch_order[self.batch_cursor..self.batch_cursor + take].to_vec();
        self.batch_cursor += take;
        batch
    }

    /// The local training half-step: one SGD step on a fresh minibatch.
    pub fn local_step(&mut self, arch: &ModelArch, gamma: f64, batch_size: usize) -> Result<(), ModelError> {
        let indices = self.next_batch_indices(batch_size);
        let batch: Vec<&crate::data::Example> = indices.iter().map(|&i| &self.shard.examples[i]).collect();
        let updated = local_sgd_step(arch, &self.model, &batch, gamma)?;
        self.model = updated;
        Ok(())
    }

    /// Merge newly learned peer ids; the local id is filtered out.
    pub fn merge_peers<I: IntoIterator<Item = NodeId>>(&mut self, peers: I) {
        let id = self.id;
        self.known_peers.extend(peers.into_iter().filter(|&p| p != id));
    }

    /// Replace the model with the uniform average of itself and the received
    /// models, summing in ascending node-id order (own model included at its
    /// id position) so the result does not depend on arrival order.
    pub fn aggregate_uniform(&mut self, received: &[(NodeId, &ModelParams)]) -> Result<(), ModelError> {
        let mut items: Vec<(NodeId, &ModelParams)> = received.to_vec();
        items.push((self.id, &self.model));
        items.sort_by_key(|&(id, _)| id);
        debug_assert!(items.windows(2).all(|w| w[0].0 != w[1].0), "duplicate senders");
        let refs: Vec<&ModelParams> = items.iter().map(|&(_, m)| m).collect();
        let updated = mean_of(&refs)?;
        self.model = updated;
        Ok(())
    }

    /// Remember a received model for later transitive estimation, evicting
    /// the stalest stash entry over capacity.
    pub fn stash_peer_model(&mut self, peer: NodeId, round: u64, model: ModelParams) {
        self.peer_models.insert(peer, model);
        self.peer_model_rounds.insert(peer, round);
        while self.peer_models.len() > MAX_CACHED_PEER_MODELS {
            let oldest = self
                .peer_model_rounds
                .iter()
                .min_by_key(|&(&id, &r)| (r, id))
                .map(|(&id, _)| id)
                .expect("stash is non-empty");
            self.peer_models.remove(&oldest);
            self.peer_model_rounds.remove(&oldest);
        }
    }
}
