//! Deterministic synchronous-round simulation of decentralized learning over
//! dynamic communication topologies.
//!
//! The library provides the learning substrate (synthetic non-IID data,
//! softmax-regression and MLP models, local SGD), layer-wise model similarity
//! with gossiped transitive estimation, dissimilarity-biased peer selection,
//! capacity-constrained connection negotiation, four protocol round
//! implementations (adaptive morph topology, epidemic push, static
//! Metropolis-Hastings, fully connected), a reproducible round-based engine,
//! and a Monte-Carlo estimator for hybrid-topology connectivity.

pub mod connectivity;
pub mod data;
pub mod engine;
pub mod model;
pub mod negotiation;
pub mod protocols;
pub mod rng;
pub mod selection;
pub mod similarity;
pub mod topology;

/// Node identifier: nodes are always `0..n` within one experiment.
pub type NodeId = usize;

pub use data::{dirichlet_partition, generate_synthetic_dataset, Dataset, Example, PartitionSpec};
pub use engine::{
    communication_cost, inter_node_variance, run_experiment, ExperimentConfig, Protocol, RoundMetrics, RunResult,
};
pub use model::{average_models, evaluate, local_sgd_step, ModelArch, ModelParams};
pub use negotiation::{negotiate, ConnectionRequest, NegotiationOutcome};
pub use selection::{sample_biased, softmax_weights, update_wanted_senders, CandidateScores, SelectionParams};
pub use similarity::{angular_triangle_slack, cosine_similarity, estimate_similarity, SimilarityHistory, SimilarityReport};
pub use topology::Topology;
