//! The per-round communication graph and graph utilities.
//!
//! Edges are directed: `(sender, receiver)` means the sender's model reaches
//! the receiver this round. Connectivity is always judged in the undirected
//! sense via union-find.

use std::collections::BTreeSet;
use std::io;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("{nodes} nodes of degree {degree}: {reason}")]
    InvalidRegularGraph {
        nodes: usize,
        degree: usize,
        reason: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Disjoint-set forest with path compression.
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(size: usize) -> Self {
        UnionFind {
            parent: (0..size).collect(),
        }
    }

    pub(crate) fn find(&mut self, x: usize) -> usize {
        if self.parent[x] != x {
            self.parent[x] = self.find(self.parent[x]);
        }
        self.parent[x]
    }

    pub(crate) fn union(&mut self, x: usize, y: usize) {
        let rx = self.find(x);
        let ry = self.find(y);
        if rx != ry {
            self.parent[rx] = ry;
        }
    }

    pub(crate) fn component_count(&mut self) -> usize {
        (0..self.parent.len()).filter(|&i| self.find(i) == i).count()
    }
}

/// A directed communication graph over nodes `0..n`, stored as per-receiver
/// sender sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    senders_of: Vec<BTreeSet<NodeId>>,
    out_degree: Vec<usize>,
}

impl Topology {
    pub fn new(num_nodes: usize) -> Self {
        Topology {
            senders_of: vec![BTreeSet::new(); num_nodes],
            out_degree: vec![0; num_nodes],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.senders_of.len()
    }

    /// Insert edge `sender -> receiver`; returns false if it already existed.
    pub fn add_edge(&mut self, sender: NodeId, receiver: NodeId) -> bool {
        assert_ne!(sender, receiver, "self-edges are not allowed");
        assert!(sender < self.num_nodes() && receiver < self.num_nodes());
        let inserted = self.senders_of[receiver].insert(sender);
        if inserted {
            self.out_degree[sender] += 1;
        }
        inserted
    }

    pub fn has_edge(&self, sender: NodeId, receiver: NodeId) -> bool {
        self.senders_of[receiver].contains(&sender)
    }

    /// Peers that send to `receiver` this round.
    pub fn senders_of(&self, receiver: NodeId) -> &BTreeSet<NodeId> {
        &self.senders_of[receiver]
    }

    pub fn in_degree(&self, node: NodeId) -> usize {
        self.senders_of[node].len()
    }

    pub fn out_degree(&self, node: NodeId) -> usize {
        self.out_degree[node]
    }

    pub fn edge_count(&self) -> usize {
        self.senders_of.iter().map(BTreeSet::len).sum()
    }

    /// All edges as `(sender, receiver)`, ordered by receiver then sender.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.senders_of
            .iter()
            .enumerate()
            .flat_map(|(receiver, senders)| senders.iter().map(move |&sender| (sender, receiver)))
    }

    /// True when ignoring edge directions leaves a single component.
    pub fn is_connected_undirected(&self) -> bool {
        if self.num_nodes() <= 1 {
            return true;
        }
        let mut uf = UnionFind::new(self.num_nodes());
        for (sender, receiver) in self.edges() {
            uf.union(sender, receiver);
        }
        uf.component_count() == 1
    }

    /// Nodes with no incoming connection; they cannot update from peers.
    pub fn isolated_nodes(&self) -> Vec<NodeId> {
        (0..self.num_nodes()).filter(|&i| self.in_degree(i) == 0).collect()
    }

    /// Append edges to a CSV writer as `(round, src, dst)` rows.
    pub fn append_edges_csv<W: io::Write>(
        &self,
        round: u64,
        writer: &mut csv::Writer<W>,
    ) -> Result<(), TopologyError> {
        for (sender, receiver) in self.edges() {
            writer.write_record(&[round.to_string(), sender.to_string(), receiver.to_string()])?;
        }
        Ok(())
    }
}

/// Build a topology where both directions of every undirected edge carry
/// a model, so in- and out-degree equal the undirected degree.
pub fn bidirect(adjacency: &[BTreeSet<NodeId>]) -> Topology {
    let mut topo = Topology::new(adjacency.len());
    for (node, neighbors) in adjacency.iter().enumerate() {
        for &peer in neighbors {
            topo.add_edge(node, peer);
            topo.add_edge(peer, node);
        }
    }
    topo
}

/// Generate a random connected `degree`-regular undirected graph by repeated
/// random stub pairing, restarting on dead ends or disconnected results.
pub fn random_regular_undirected<R: Rng>(
    n: usize,
    degree: usize,
    rng: &mut R,
) -> Result<Vec<BTreeSet<NodeId>>, TopologyError> {
    let invalid = |reason: &str| TopologyError::InvalidRegularGraph {
        nodes: n,
        degree,
        reason: reason.to_string(),
    };
    if n < 2 || degree < 1 {
        return Err(invalid("need n >= 2 and degree >= 1"));
    }
    if degree >= n {
        return Err(invalid("degree must be below n"));
    }
    if (n * degree) % 2 != 0 {
        return Err(invalid("n * degree must be even"));
    }

    const MAX_ATTEMPTS: usize = 10_000;
    for _ in 0..MAX_ATTEMPTS {
        if let Some(adj) = try_pairing(n, degree, rng) {
            let connected = {
                let mut uf = UnionFind::new(n);
                for (node, neighbors) in adj.iter().enumerate() {
                    for &peer in neighbors {
                        uf.union(node, peer);
                    }
                }
                uf.component_count() == 1
            };
            if connected {
                return Ok(adj);
            }
        }
    }
    Err(invalid("no connected regular graph found within attempt budget"))
}

/// One pass of stub pairing with retries on clashing stubs; None on dead end.
fn try_pairing<R: Rng>(n: usize, degree: usize, rng: &mut R) -> Option<Vec<BTreeSet<NodeId>>> {
    let mut stubs: Vec<NodeId> = (0..n).flat_map(|i| std::iter::repeat(i).take(degree)).collect();
    stubs.shuffle(rng);
    let mut adj: Vec<BTreeSet<NodeId>> = vec![BTreeSet::new(); n];
    // Pair off the stub list back to front; on a clash, retry the tail pair
    // against a random earlier stub a bounded number of times.
    let mut budget = n * degree * 20;
    while stubs.len() >= 2 {
        let a = stubs[stubs.len() - 1];
        let b = stubs[stubs.len() - 2];
        if a != b && !adj[a].contains(&b) {
            stubs.truncate(stubs.len() - 2);
            adj[a].insert(b);
            adj[b].insert(a);
            continue;
        }
        if budget == 0 || stubs.len() == 2 {
            return None;
        }
        budget -= 1;
        let swap_with = rng.random_range(0..stubs.len() - 2);
        let last = stubs.len() - 1;
        stubs.swap(swap_with, last);
    }
    Some(adj)
}

/// Generate a random digraph where every node has in- and out-degree `k`,
/// as the union of `k` conflict-free random permutations.
pub fn random_regular_digraph<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<Topology, TopologyError> {
    let invalid = |reason: &str| TopologyError::InvalidRegularGraph {
        nodes: n,
        degree: k,
        reason: reason.to_string(),
    };
    if n < 2 || k < 1 || k >= n {
        return Err(invalid("need n >= 2 and 1 <= k < n"));
    }
    const MAX_ATTEMPTS: usize = 100_000;
    let mut topo = Topology::new(n);
    let mut placed = 0usize;
    let mut attempts = 0usize;
    while placed < k {
        attempts += 1;
        if attempts > MAX_ATTEMPTS {
            return Err(invalid("no conflict-free permutation union found"));
        }
        let mut targets: Vec<NodeId> = (0..n).collect();
        targets.shuffle(rng);
        if (0..n).any(|i| targets[i] == i || topo.has_edge(i, targets[i])) {
            continue;
        }
        for (i, &t) in targets.iter().enumerate() {
            topo.add_edge(i, t);
        }
        placed += 1;
    }
    Ok(topo)
}
