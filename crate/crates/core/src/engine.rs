//! Deterministic synchronous-round experiment executor.
//!
//! The engine drives all nodes through `rounds` rounds with hard barriers
//! between the local-step, topology, message-delivery, and metrics phases.
//! Every random draw comes from a stream derived from the experiment seed, a
//! node id or round number, and a purpose label, so the full metric series is
//! a pure function of the configuration; node phases may run on a rayon pool
//! and the results do not depend on the thread count.

use std::collections::BTreeSet;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    dirichlet_partition, generate_synthetic_dataset, split_train_test, DataError, PartitionSpec,
};
use crate::model::{evaluate, mean_of, ModelArch, ModelError, ModelParams};
use crate::negotiation::{negotiate, ConnectionRequest};
use crate::protocols::epidemic::pick_push_targets;
use crate::protocols::morph::{make_model_message, receive_models, reevaluate_wanted_senders, MorphParams};
use crate::protocols::static_mh::mh_aggregate;
use crate::protocols::{ModelMessage, NodeState};
use crate::rng::{derive_rng, derive_seed};
use crate::selection::SelectionError;
use crate::topology::{bidirect, random_regular_digraph, random_regular_undirected, Topology, TopologyError};
use crate::NodeId;

/// Accounting bytes per model parameter in a model message.
pub const BYTES_PER_PARAM: u64 = 4;
/// Accounting bytes per gossip entry (similarity tuple or peer id).
pub const BYTES_PER_GOSSIP_ENTRY: u64 = 12;

#[derive(Debug, Error)]
#[error("invalid config field `{field}`: {reason}")]
pub struct ConfigError {
    pub field: &'static str,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("accuracy list is empty")]
    EmptyAccuracies,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Morph,
    Epidemic,
    StaticMh,
    FullyConnected,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Morph => "morph",
            Protocol::Epidemic => "epidemic",
            Protocol::StaticMh => "static_mh",
            Protocol::FullyConnected => "fully_connected",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Softmax,
    Mlp,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpidemicVariant {
    /// Every node samples its own push targets.
    #[default]
    Local,
    /// A round-global random k-regular digraph.
    Oracle,
}

fn default_view_size() -> usize {
    3
}
fn default_d_r() -> usize {
    2
}
fn default_beta() -> f64 {
    500.0
}
fn default_delta_r() -> u64 {
    5
}
fn default_gamma() -> f64 {
    0.05
}
fn default_batch_size() -> usize {
    8
}
fn default_eval_every() -> u64 {
    10
}
fn default_alpha() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    1
}
fn default_hidden_dim() -> usize {
    32
}
fn default_init_std() -> f64 {
    0.05
}
fn default_num_classes() -> usize {
    10
}
fn default_examples_per_class() -> usize {
    100
}
fn default_test_per_class() -> usize {
    20
}
fn default_feature_dim() -> usize {
    16
}
fn default_cluster_spread() -> f64 {
    1.0
}

/// Synthetic dataset parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_examples_per_class")]
    pub examples_per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_cluster_spread")]
    pub cluster_spread: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_classes: default_num_classes(),
            examples_per_class: default_examples_per_class(),
            test_per_class: default_test_per_class(),
            feature_dim: default_feature_dim(),
            cluster_spread: default_cluster_spread(),
        }
    }
}

/// Full experiment description; a config plus nothing else reproduces a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    /// Number of nodes.
    pub n: usize,
    /// Total communication rounds T.
    pub rounds: u64,
    /// View size s: per-node in-degree (and epidemic's k).
    #[serde(default = "default_view_size")]
    pub view_size: usize,
    /// Out-degree cap during negotiation; defaults to `view_size`.
    #[serde(default)]
    pub k_out: Option<usize>,
    /// Uniform-random slots within the view.
    #[serde(default = "default_d_r")]
    pub d_r: usize,
    /// Softmax sharpness for dissimilarity-biased selection.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Rounds between wanted-sender re-evaluations.
    #[serde(default = "default_delta_r")]
    pub delta_r: u64,
    /// SGD step size.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Evaluate and record metrics every this many rounds (plus the final round).
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    /// Dirichlet concentration for the non-IID partition.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
    #[serde(default)]
    pub epidemic_variant: EpidemicVariant,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Keep per-round edge lists in the run result.
    #[serde(default)]
    pub record_topology: bool,
}

impl ExperimentConfig {
    /// The resolved out-degree cap.
    pub fn k_out(&self) -> usize {
        self.k_out.unwrap_or(self.view_size)
    }

    pub fn arch(&self) -> ModelArch {
        match self.model {
            ModelKind::Softmax => ModelArch::Softmax {
                feature_dim: self.dataset.feature_dim,
                num_classes: self.dataset.num_classes,
            },
            ModelKind::Mlp => ModelArch::Mlp {
                feature_dim: self.dataset.feature_dim,
                hidden_dim: self.hidden_dim,
                num_classes: self.dataset.num_classes,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |field: &'static str, reason: String| Err(ConfigError { field, reason });
        if self.n < 2 {
            return err("n", format!("need at least 2 nodes, got {}", self.n));
        }
        if self.rounds < 1 {
            return err("rounds", "need at least 1 round".into());
        }
        if self.view_size > self.n - 1 {
            return err(
                "view_size",
                format!("view_size {} exceeds n-1 = {}", self.view_size, self.n - 1),
            );
        }
        let needs_view = !matches!(self.protocol, Protocol::FullyConnected);
        if needs_view && self.view_size < 1 && !matches!(self.protocol, Protocol::Epidemic) {
            return err("view_size", "must be >= 1".into());
        }
        if matches!(self.protocol, Protocol::Morph | Protocol::StaticMh) {
            if self.view_size < 1 {
                return err("view_size", "must be >= 1".into());
            }
            if (self.n * self.view_size) % 2 != 0 {
                return err(
                    "view_size",
                    format!(
                        "n * view_size = {} must be even to build a regular graph",
                        self.n * self.view_size
                    ),
                );
            }
        }
        if matches!(self.protocol, Protocol::Morph) && self.k_out() < 1 {
            return err("k_out", "must be >= 1".into());
        }
        if self.d_r > self.view_size {
            return err(
                "d_r",
                format!("random slots {} exceed view_size {}", self.d_r, self.view_size),
            );
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return err("beta", "must be finite and >= 0".into());
        }
        if self.delta_r < 1 {
            return err("delta_r", "must be >= 1".into());
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return err("gamma", "must be finite and >= 0".into());
        }
        if self.batch_size < 1 {
            return err("batch_size", "must be >= 1".into());
        }
        if self.eval_every < 1 {
            return err("eval_every", "must be >= 1".into());
        }
        if !(self.alpha > 0.0) {
            return err("alpha", "must be > 0".into());
        }
        if matches!(self.model, ModelKind::Mlp) && self.hidden_dim < 1 {
            return err("hidden_dim", "must be >= 1".into());
        }
        if !(self.init_std >= 0.0) {
            return err("init_std", "must be >= 0".into());
        }
        if self.dataset.num_classes < 2 {
            return err("dataset.num_classes", "need at least 2 classes".into());
        }
        if self.dataset.examples_per_class < 1 {
            return err("dataset.examples_per_class", "must be >= 1".into());
        }
        if self.dataset.test_per_class < 1 {
            return err("dataset.test_per_class", "must be >= 1".into());
        }
        if self.dataset.feature_dim < 1 {
            return err("dataset.feature_dim", "must be >= 1".into());
        }
        if !(self.dataset.cluster_spread > 0.0) {
            return err("dataset.cluster_spread", "must be > 0".into());
        }
        let train_examples = self.dataset.num_classes * self.dataset.examples_per_class;
        if train_examples < self.n {
            return err(
                "dataset.examples_per_class",
                format!("{train_examples} train examples cannot cover {} nodes", self.n),
            );
        }
        Ok(())
    }
}

/// One recorded evaluation round. Message and byte counts cover all rounds
/// since the previous record, so the column sums account for the whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: u64,
    /// Mean test accuracy across nodes, in percent.
    pub mean_accuracy: f64,
    /// Mean test cross-entropy across nodes.
    pub mean_loss: f64,
    /// Population variance of per-node accuracies (percent squared).
    pub inter_node_variance: f64,
    /// Nodes with no incoming connection in this round's topology.
    pub isolated_count: u32,
    /// Model messages since the previous record (inclusive of this round).
    pub messages: u64,
    /// Accounted bytes since the previous record.
    pub bytes_estimate: u64,
    /// Whether this round's communication graph is connected undirected.
    pub connected: bool,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub metrics: Vec<RoundMetrics>,
    /// Final per-node accuracy in percent.
    pub final_accuracies: Vec<f64>,
    pub final_losses: Vec<f64>,
    /// Final per-node models.
    pub final_models: Vec<ModelParams>,
    /// Final known-peer-set size per node.
    pub final_known_peers: Vec<usize>,
    /// Isolated-node count for every round, 1-indexed by position + 1.
    pub isolated_per_round: Vec<u32>,
    pub total_messages: u64,
    pub total_bytes: u64,
    /// Per-round edge lists when `record_topology` is set.
    pub topology_log: Option<Vec<(u64, Vec<(NodeId, NodeId)>)>>,
}

/// Population variance of per-node test accuracies (Welford's recurrence).
pub fn inter_node_variance(accuracies: &[f64]) -> Result<f64, EngineError> {
    if accuracies.is_empty() {
        return Err(EngineError::EmptyAccuracies);
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in accuracies.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Ok(m2 / accuracies.len() as f64)
}

/// Sum message and byte counts over recorded rounds.
pub fn communication_cost(metrics: &[RoundMetrics]) -> (u64, u64) {
    metrics
        .iter()
        .fold((0, 0), |(m, b), row| (m + row.messages, b + row.bytes_estimate))
}

struct RoundTraffic {
    messages: u64,
    bytes: u64,
    isolated: u32,
    connected: bool,
    edges: Option<Vec<(NodeId, NodeId)>>,
}

/// Execute a full experiment. The result is a pure function of the config;
/// thread count only affects wall-clock time.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult, EngineError> {
    cfg.validate()?;
    let n = cfg.n;
    let arch = cfg.arch();

    let full = generate_synthetic_dataset(
        cfg.dataset.num_classes,
        cfg.dataset.examples_per_class + cfg.dataset.test_per_class,
        cfg.dataset.feature_dim,
        cfg.dataset.cluster_spread,
        derive_seed(cfg.seed, 0, "data"),
    )?;
    let (train, testset) = split_train_test(&full, cfg.dataset.test_per_class)?;
    let shards = dirichlet_partition(
        &train,
        &PartitionSpec {
            num_nodes: n,
            alpha: cfg.alpha,
            seed: derive_seed(cfg.seed, 0, "partition"),
        },
    )?;

    let init_model = arch.init_params(cfg.init_std, &mut derive_rng(cfg.seed, 0, "init"));

    let initial_adjacency = match cfg.protocol {
        Protocol::Morph | Protocol::StaticMh => Some(random_regular_undirected(
            n,
            cfg.view_size,
            &mut derive_rng(cfg.seed, 0, "graph"),
        )?),
        _ => None,
    };

    let mut nodes: Vec<NodeState> = (0..n)
        .map(|i| {
            let (known, wanted): (BTreeSet<NodeId>, Vec<NodeId>) = match (&cfg.protocol, &initial_adjacency) {
                (Protocol::Morph, Some(adj)) => (adj[i].clone(), adj[i].iter().copied().collect()),
                (Protocol::StaticMh, Some(adj)) => (adj[i].clone(), Vec::new()),
                _ => ((0..n).filter(|&j| j != i).collect(), Vec::new()),
            };
            NodeState::new(i, init_model.clone(), shards[i].clone(), known, wanted, cfg.seed)
        })
        .collect();

    let static_degrees: Vec<usize> = initial_adjacency
        .as_ref()
        .map(|adj| adj.iter().map(BTreeSet::len).collect())
        .unwrap_or_default();
    let mut morph_topology = match cfg.protocol {
        Protocol::Morph => Some(bidirect(initial_adjacency.as_ref().expect("morph has a graph"))),
        _ => None,
    };

    let morph_params = MorphParams {
        view_size: cfg.view_size,
        biased_count: cfg.view_size - cfg.d_r,
        beta: cfg.beta,
        staleness_rounds: 10 * cfg.delta_r,
    };

    let mut metrics: Vec<RoundMetrics> = Vec::new();
    let mut isolated_per_round: Vec<u32> = Vec::with_capacity(cfg.rounds as usize);
    let mut topology_log = cfg.record_topology.then(Vec::new);
    let mut total_messages = 0u64;
    let mut total_bytes = 0u64;
    let mut pending_messages = 0u64;
    let mut pending_bytes = 0u64;

    for round in 1..=cfg.rounds {
        nodes
            .par_iter_mut()
            .try_for_each(|node| node.local_step(&arch, cfg.gamma, cfg.batch_size))?;

        let traffic = match cfg.protocol {
            Protocol::Morph => {
                morph_round(cfg, &morph_params, round, &mut nodes, &mut morph_topology)?
            }
            Protocol::Epidemic => epidemic_round(cfg, round, &mut nodes)?,
            Protocol::StaticMh => static_round(
                cfg,
                initial_adjacency.as_ref().expect("static has a graph"),
                &static_degrees,
                &mut nodes,
            )?,
            Protocol::FullyConnected => fully_connected_round(cfg, &mut nodes)?,
        };

        total_messages += traffic.messages;
        total_bytes += traffic.bytes;
        pending_messages += traffic.messages;
        pending_bytes += traffic.bytes;
        isolated_per_round.push(traffic.isolated);
        if let (Some(log), Some(edges)) = (topology_log.as_mut(), traffic.edges) {
            log.push((round, edges));
        }

        if round % cfg.eval_every == 0 || round == cfg.rounds {
            let evals: Vec<(f64, f64)> = nodes
                .par_iter()
                .map(|node| evaluate(&arch, &node.model, &testset))
                .collect::<Result<_, _>>()?;
            let accuracies: Vec<f64> = evals.iter().map(|&(a, _)| a * 100.0).collect();
            let losses: Vec<f64> = evals.iter().map(|&(_, l)| l).collect();
            let mean_accuracy = accuracies.iter().sum::<f64>() / n as f64;
            let mean_loss = losses.iter().sum::<f64>() / n as f64;
            metrics.push(RoundMetrics {
                round,
                mean_accuracy,
                mean_loss,
                inter_node_variance: inter_node_variance(&accuracies)?,
                isolated_count: traffic.isolated,
                messages: pending_messages,
                bytes_estimate: pending_bytes,
                connected: traffic.connected,
            });
            pending_messages = 0;
            pending_bytes = 0;
        }
    }

    // The last round is always recorded, so the final evaluation exists.
    let final_evals: Vec<(f64, f64)> = nodes
        .par_iter()
        .map(|node| evaluate(&arch, &node.model, &testset))
        .collect::<Result<_, _>>()?;

    Ok(RunResult {
        metrics,
        final_accuracies: final_evals.iter().map(|&(a, _)| a * 100.0).collect(),
        final_losses: final_evals.iter().map(|&(_, l)| l).collect(),
        final_known_peers: nodes.iter().map(|node| node.known_peers.len()).collect(),
        final_models: nodes.into_iter().map(|node| node.model).collect(),
        isolated_per_round,
        total_messages,
        total_bytes,
        topology_log,
    })
}

/// Deliver one model message along every edge of `topology` (morph form,
/// with gossip), then let receivers ingest and aggregate.
fn morph_round(
    cfg: &ExperimentConfig,
    params: &MorphParams,
    round: u64,
    nodes: &mut [NodeState],
    current: &mut Option<Topology>,
) -> Result<RoundTraffic, EngineError> {
    let n = cfg.n;
    if round % cfg.delta_r == 0 {
        let requests: Vec<Vec<ConnectionRequest>> = nodes
            .par_iter_mut()
            .map(|node| reevaluate_wanted_senders(node, round, params))
            .collect::<Result<_, _>>()?;
        let outcome = negotiate(
            &requests,
            cfg.view_size,
            cfg.k_out(),
            &mut derive_rng(cfg.seed, round, "negotiate"),
        );
        *current = Some(outcome.topology);
    }
    let topology = current.as_ref().expect("morph topology initialized");

    let mut receivers_of: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for receiver in 0..n {
        for &sender in topology.senders_of(receiver) {
            receivers_of[sender].push(receiver);
        }
    }

    let outboxes: Vec<Vec<(NodeId, ModelMessage)>> = nodes
        .par_iter_mut()
        .zip(receivers_of.par_iter())
        .map(|(node, receivers)| {
            receivers
                .iter()
                .map(|&r| (r, make_model_message(node, round)))
                .collect()
        })
        .collect();

    let mut inboxes: Vec<Vec<ModelMessage>> = vec![Vec::new(); n];
    let mut messages = 0u64;
    let mut bytes = 0u64;
    for outbox in outboxes {
        for (receiver, msg) in outbox {
            messages += 1;
            bytes += msg.accounted_bytes();
            inboxes[receiver].push(msg);
        }
    }

    nodes
        .par_iter_mut()
        .zip(inboxes.par_iter())
        .try_for_each(|(node, msgs)| receive_models(node, round, msgs))?;

    Ok(RoundTraffic {
        messages,
        bytes,
        isolated: topology.isolated_nodes().len() as u32,
        connected: topology.is_connected_undirected(),
        edges: cfg.record_topology.then(|| topology.edges().collect()),
    })
}

fn epidemic_round(cfg: &ExperimentConfig, round: u64, nodes: &mut [NodeState]) -> Result<RoundTraffic, EngineError> {
    let n = cfg.n;
    let k = cfg.view_size;
    let topology = match cfg.epidemic_variant {
        EpidemicVariant::Local => {
            let picks: Vec<Vec<NodeId>> = nodes
                .par_iter_mut()
                .map(|node| pick_push_targets(node, n, k))
                .collect();
            let mut topo = Topology::new(n);
            for (sender, targets) in picks.iter().enumerate() {
                for &receiver in targets {
                    topo.add_edge(sender, receiver);
                }
            }
            topo
        }
        EpidemicVariant::Oracle => {
            if k == 0 {
                Topology::new(n)
            } else {
                random_regular_digraph(n, k, &mut derive_rng(cfg.seed, round, "el-oracle"))?
            }
        }
    };

    let bytes_per_message = BYTES_PER_PARAM * nodes[0].model.param_count() as u64;
    let messages = topology.edge_count() as u64;
    let bytes = messages * bytes_per_message;

    let halves: Vec<ModelParams> = nodes.iter().map(|node| node.model.clone()).collect();
    nodes.par_iter_mut().enumerate().try_for_each(|(i, node)| {
        let received: Vec<(NodeId, &ModelParams)> = topology
            .senders_of(i)
            .iter()
            .map(|&sender| (sender, &halves[sender]))
            .collect();
        node.aggregate_uniform(&received)
    })?;

    Ok(RoundTraffic {
        messages,
        bytes,
        isolated: topology.isolated_nodes().len() as u32,
        connected: topology.is_connected_undirected(),
        edges: cfg.record_topology.then(|| topology.edges().collect()),
    })
}

fn static_round(
    cfg: &ExperimentConfig,
    adjacency: &[BTreeSet<NodeId>],
    degrees: &[usize],
    nodes: &mut [NodeState],
) -> Result<RoundTraffic, EngineError> {
    let halves: Vec<ModelParams> = nodes.iter().map(|node| node.model.clone()).collect();
    nodes.par_iter_mut().enumerate().try_for_each(|(i, node)| {
        let neighbors: Vec<(NodeId, &ModelParams)> =
            adjacency[i].iter().map(|&j| (j, &halves[j])).collect();
        let mixed = mh_aggregate(i, &halves[i], &neighbors, degrees)?;
        node.model = mixed;
        Ok::<(), ModelError>(())
    })?;

    let edge_messages: usize = degrees.iter().sum();
    let bytes_per_message = BYTES_PER_PARAM * halves[0].param_count() as u64;
    Ok(RoundTraffic {
        messages: edge_messages as u64,
        bytes: edge_messages as u64 * bytes_per_message,
        isolated: 0,
        connected: true,
        edges: cfg.record_topology.then(|| {
            let mut edges = Vec::new();
            for (receiver, senders) in adjacency.iter().enumerate() {
                for &sender in senders {
                    edges.push((sender, receiver));
                }
            }
            edges
        }),
    })
}

fn fully_connected_round(cfg: &ExperimentConfig, nodes: &mut [NodeState]) -> Result<RoundTraffic, EngineError> {
    let n = cfg.n;
    let refs: Vec<&ModelParams> = nodes.iter().map(|node| &node.model).collect();
    let mean = mean_of(&refs)?;
    nodes.par_iter_mut().for_each(|node| node.model = mean.clone());

    let messages = (n * (n - 1)) as u64;
    let bytes = messages * BYTES_PER_PARAM * mean.param_count() as u64;
    Ok(RoundTraffic {
        messages,
        bytes,
        isolated: 0,
        connected: true,
        edges: cfg.record_topology.then(|| {
            let mut edges = Vec::new();
            for receiver in 0..n {
                for sender in 0..n {
                    if sender != receiver {
                        edges.push((sender, receiver));
                    }
                }
            }
            edges
        }),
    })
}

/// Fixed-width float formatting (9 significant digits) so CSV output is
/// byte-stable across runs and platforms.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

pub const METRICS_CSV_HEADER: &str =
    "round,mean_accuracy,mean_loss,inter_node_variance,isolated_count,messages,bytes_estimate,connected";

/// Write the metrics series as CSV, one row per recorded round.
pub fn write_metrics_csv<W: io::Write>(metrics: &[RoundMetrics], mut writer: W) -> io::Result<()> {
    writeln!(writer, "{METRICS_CSV_HEADER}")?;
    for row in metrics {
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{}",
            row.round,
            fmt_float(row.mean_accuracy),
            fmt_float(row.mean_loss),
            fmt_float(row.inter_node_variance),
            row.isolated_count,
            row.messages,
            row.bytes_estimate,
            row.connected
        )?;
    }
    Ok(())
}

pub const PER_NODE_CSV_HEADER: &str = "node,accuracy,loss";

/// Write final per-node accuracy (percent) and loss as CSV.
pub fn write_per_node_csv<W: io::Write>(
    accuracies: &[f64],
    losses: &[f64],
    mut writer: W,
) -> io::Result<()> {
    writeln!(writer, "{PER_NODE_CSV_HEADER}")?;
    for (node, (acc, loss)) in accuracies.iter().zip(losses).enumerate() {
        writeln!(writer, "{},{},{}", node, fmt_float(*acc), fmt_float(*loss))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn base_config(protocol: Protocol) -> ExperimentConfig {
        ExperimentConfig {
            protocol,
            n: 4,
            rounds: 20,
            view_size: 1,
            k_out: None,
            d_r: 1,
            beta: 500.0,
            delta_r: 5,
            gamma: 0.05,
            batch_size: 4,
            eval_every: 5,
            alpha: 0.5,
            seed: 1,
            model: ModelKind::Softmax,
            hidden_dim: 8,
            init_std: 0.05,
            epidemic_variant: EpidemicVariant::Local,
            dataset: DatasetConfig {
                num_classes: 3,
                examples_per_class: 12,
                test_per_class: 4,
                feature_dim: 4,
                cluster_spread: 0.5,
            },
            record_topology: false,
        }
    }

    #[test]
    fn variance_of_equal_values_is_zero() {
        assert_eq!(inter_node_variance(&[3.5; 9]).unwrap(), 0.0);
    }

    #[test]
    fn variance_two_point() {
        let v = inter_node_variance(&[0.0, 100.0]).unwrap();
        assert!((v - 2500.0).abs() < 1e-9);
    }

    #[test]
    fn variance_matches_two_pass_oracle() {
        let mut rng = derive_rng(3, 0, "var-test");
        use rand::Rng;
        for _ in 0..100 {
            let xs: Vec<f64> = (0..rng.random_range(1..40)).map(|_| rng.random_range(0.0..100.0)).collect();
            let got = inter_node_variance(&xs).unwrap();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let oracle = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
            assert!((got - oracle).abs() < 1e-9, "{got} vs oracle {oracle}");
        }
    }

    #[test]
    fn variance_rejects_empty_input() {
        assert!(matches!(inter_node_variance(&[]), Err(EngineError::EmptyAccuracies)));
    }

    #[test]
    fn communication_cost_sums_rows() {
        assert_eq!(communication_cost(&[]), (0, 0));
        let cfg = base_config(Protocol::FullyConnected);
        let cfg = ExperimentConfig {
            rounds: 1,
            eval_every: 1,
            ..cfg
        };
        let result = run_experiment(&cfg).unwrap();
        let (messages, _) = communication_cost(&result.metrics);
        assert_eq!(messages, 12, "n=4 fully connected sends n(n-1) messages");
    }

    #[test]
    fn static_message_count_is_exact() {
        let cfg = ExperimentConfig {
            n: 8,
            view_size: 3,
            rounds: 17,
            eval_every: 5,
            ..base_config(Protocol::StaticMh)
        };
        let result = run_experiment(&cfg).unwrap();
        let (messages, _) = communication_cost(&result.metrics);
        assert_eq!(messages, 8 * 3 * 17);
        assert_eq!(result.total_messages, 8 * 3 * 17);
    }

    #[test]
    fn validation_names_offending_field() {
        let bad = ExperimentConfig {
            n: 1,
            ..base_config(Protocol::Morph)
        };
        let err = bad.validate().unwrap_err();
        assert_eq!(err.field, "n");

        let bad = ExperimentConfig {
            d_r: 9,
            view_size: 3,
            n: 8,
            ..base_config(Protocol::Morph)
        };
        assert_eq!(bad.validate().unwrap_err().field, "d_r");

        let bad = ExperimentConfig {
            n: 5,
            view_size: 3,
            ..base_config(Protocol::Morph)
        };
        assert_eq!(bad.validate().unwrap_err().field, "view_size");
    }

    #[test]
    fn metrics_csv_is_schema_stable() {
        let rows = vec![RoundMetrics {
            round: 10,
            mean_accuracy: 81.25,
            mean_loss: 0.5,
            inter_node_variance: 1.75,
            isolated_count: 2,
            messages: 300,
            bytes_estimate: 12_000,
            connected: true,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), METRICS_CSV_HEADER);
        assert_eq!(
            lines.next().unwrap(),
            "10,8.12500000e1,5.00000000e-1,1.75000000e0,2,300,12000,true"
        );
    }
}
