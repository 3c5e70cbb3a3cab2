//! Layer-averaged cosine similarity, gossiped similarity reports, and
//! transitive similarity estimation for peers whose models were never seen.
//!
//! Similarity between two models is the per-layer cosine averaged across
//! layers, which keeps large layers from dominating. A node that lacks a
//! peer's model combines gossiped reports `(round, reporter, value)` with its
//! own similarity to each reporter; the angular triangle inequality bounds
//! how far such an estimate can drift for true cosines.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::model::ModelParams;
use crate::NodeId;

/// Buffered reports per target peer.
pub const HISTORY_CAPACITY: usize = 5;

/// Layer norms below this are treated as degenerate rather than divided by.
pub const DEGENERATE_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("model shapes do not match")]
    ShapeMismatch,
    #[error("layer {0:?} has near-zero norm; pair is incomparable")]
    DegenerateLayer(String),
    #[error("similarity value {0} outside [-1, 1]")]
    OutOfRange(f64),
}

/// One gossiped similarity observation: at `round`, `reporter` measured
/// `value` against the target peer the report is filed under.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityReport {
    pub round: u64,
    pub reporter: NodeId,
    pub value: f64,
}

/// Per-target FIFO buffers of the most recent similarity reports.
#[derive(Clone, Debug, Default)]
pub struct SimilarityHistory {
    buffers: BTreeMap<NodeId, VecDeque<SimilarityReport>>,
}

impl SimilarityHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a report to the target's buffer, evicting the oldest entry when
    /// the buffer already holds [`HISTORY_CAPACITY`] reports.
    pub fn record(&mut self, target: NodeId, report: SimilarityReport) -> Result<(), SimilarityError> {
        if !(-1.0..=1.0).contains(&report.value) || report.value.is_nan() {
            return Err(SimilarityError::OutOfRange(report.value));
        }
        let buffer = self.buffers.entry(target).or_default();
        if buffer.len() == HISTORY_CAPACITY {
            buffer.pop_front();
        }
        buffer.push_back(report);
        Ok(())
    }

    pub fn reports(&self, target: NodeId) -> impl Iterator<Item = &SimilarityReport> {
        self.buffers.get(&target).into_iter().flatten()
    }

    pub fn targets(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.buffers.keys().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Per-layer cosine similarity averaged across layers, in [-1, 1].
///
/// Errors with [`SimilarityError::DegenerateLayer`] when any layer of either
/// model has near-zero norm; callers treat that pair as incomparable instead
/// of fabricating a similarity.
pub fn cosine_similarity(a: &ModelParams, b: &ModelParams) -> Result<f64, SimilarityError> {
    if !a.shape_matches(b) {
        return Err(SimilarityError::ShapeMismatch);
    }
    let mut total = 0.0;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        let mut dot = 0.0;
        let mut norm_a = 0.0;
        let mut norm_b = 0.0;
        for (x, y) in la.values.iter().zip(&lb.values) {
            dot += x * y;
            norm_a += x * x;
            norm_b += y * y;
        }
        let norm_a = norm_a.sqrt();
        let norm_b = norm_b.sqrt();
        if norm_a < DEGENERATE_NORM_EPS || norm_b < DEGENERATE_NORM_EPS {
            return Err(SimilarityError::DegenerateLayer(la.name.clone()));
        }
        total += clamp_unit(dot / (norm_a * norm_b));
    }
    Ok(clamp_unit(total / a.layers.len() as f64))
}

/// Estimate similarity to `target` from gossiped reports: the mean over
/// usable reports of `cos(own, reporter_model) * reported_value`.
///
/// A report is usable when its reporter's model is in `known_models`, it is
/// no older than `max_age_rounds`, and the cosine to the reporter is
/// well-defined. Returns `None` when no report is usable.
pub fn estimate_similarity(
    own: &ModelParams,
    known_models: &BTreeMap<NodeId, ModelParams>,
    history: &SimilarityHistory,
    target: NodeId,
    current_round: u64,
    max_age_rounds: u64,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for report in history.reports(target) {
        if current_round.saturating_sub(report.round) > max_age_rounds {
            continue;
        }
        let Some(reporter_model) = known_models.get(&report.reporter) else {
            continue;
        };
        let Ok(cos) = cosine_similarity(own, reporter_model) else {
            continue;
        };
        sum += cos * report.value;
        used += 1;
    }
    (used > 0).then(|| clamp_unit(sum / used as f64))
}

/// `arccos(sim_ij) + arccos(sim_jk) - arccos(sim_ik)`.
///
/// For cosines of actual vectors this slack is non-negative (the angular
/// triangle inequality), which bounds how wrong a transitive estimate can be.
pub fn angular_triangle_slack(sim_ij: f64, sim_jk: f64, sim_ik: f64) -> Result<f64, SimilarityError> {
    for v in [sim_ij, sim_jk, sim_ik] {
        if !(-1.0..=1.0).contains(&v) || v.is_nan() {
            return Err(SimilarityError::OutOfRange(v));
        }
    }
    Ok(sim_ij.acos() + sim_jk.acos() - sim_ik.acos())
}
