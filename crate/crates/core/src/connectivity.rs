//! Monte-Carlo estimation of hybrid-topology connectivity.
//!
//! Each trial gives every node a fingerprint vector drawn around one of a few
//! Gaussian cluster centers, lets every node pick `d_s` peers by
//! softmax-dissimilarity sampling plus `d_r` uniform peers, and checks
//! whether the union graph is connected when directions are ignored. Biased
//! edges concentrate across dissimilar clusters, which is exactly the regime
//! where fragmentation is a risk; the uniform edges are what reconnects it.

use std::io;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{derive_rng, derive_seed};
use crate::selection::sample_biased_indices;
use crate::topology::UnionFind;

#[derive(Debug, Error)]
pub enum ConnectivityError {
    #[error("invalid grid point: {0}")]
    InvalidGridPoint(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

fn default_trials() -> u32 {
    1000
}
fn default_clusters() -> usize {
    10
}
fn default_conn_beta() -> f64 {
    5.0
}
fn default_fingerprint_dim() -> usize {
    8
}
fn default_conn_spread() -> f64 {
    0.25
}
fn default_conn_seed() -> u64 {
    1
}

/// A sweep over (d_s, d_r) pairs at one system size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectivityGrid {
    pub n: usize,
    pub d_s_values: Vec<usize>,
    pub d_r_values: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_conn_beta")]
    pub beta: f64,
    #[serde(default = "default_fingerprint_dim")]
    pub fingerprint_dim: usize,
    #[serde(default = "default_conn_spread")]
    pub cluster_spread: f64,
    #[serde(default = "default_conn_seed")]
    pub seed: u64,
}

/// One estimated grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPointResult {
    pub n: usize,
    pub d_s: usize,
    pub d_r: usize,
    pub probability: f64,
    pub std_error: f64,
    pub trials: u32,
}

fn validate_point(n: usize, d_s: usize, d_r: usize, clusters: usize, trials: u32) -> Result<(), ConnectivityError> {
    if n < 2 {
        return Err(ConnectivityError::InvalidGridPoint(format!("n = {n} must be >= 2")));
    }
    if d_s + d_r > n - 1 {
        return Err(ConnectivityError::InvalidGridPoint(format!(
            "d_s + d_r = {} exceeds n - 1 = {}",
            d_s + d_r,
            n - 1
        )));
    }
    if clusters < 1 {
        return Err(ConnectivityError::InvalidGridPoint("clusters must be >= 1".into()));
    }
    if trials < 1 {
        return Err(ConnectivityError::InvalidGridPoint("trials must be >= 1".into()));
    }
    Ok(())
}

/// One trial: sample fingerprints, let every node select peers, and check
/// undirected connectivity of the union graph.
fn trial_is_connected<R: Rng>(
    n: usize,
    d_s: usize,
    d_r: usize,
    clusters: usize,
    beta: f64,
    dim: usize,
    spread: f64,
    rng: &mut R,
) -> bool {
    if d_s + d_r == 0 {
        return n <= 1;
    }
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, spread).expect("valid normal");
    let centers: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| normal.sample(rng)).collect())
        .collect();

    // Unit fingerprints so pairwise cosine is a plain dot product.
    let fingerprints: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let center = &centers[rng.random_range(0..clusters)];
            let v: Vec<f64> = center.iter().map(|c| c + noise.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();

    let mut uf = UnionFind::new(n);
    let mut sims = vec![0.0f64; n - 1];
    let mut others = vec![0usize; n - 1];
    for node in 0..n {
        let mut idx = 0;
        for peer in 0..n {
            if peer == node {
                continue;
            }
            others[idx] = peer;
            sims[idx] = fingerprints[node]
                .iter()
                .zip(&fingerprints[peer])
                .map(|(a, b)| a * b)
                .sum();
            idx += 1;
        }

        let biased = sample_biased_indices(&sims, d_s, beta, rng);
        let mut taken = vec![false; n - 1];
        for &i in &biased {
            taken[i] = true;
            uf.union(node, others[i]);
        }
        let mut placed = 0;
        while placed < d_r {
            let i = rng.random_range(0..n - 1);
            if !taken[i] {
                taken[i] = true;
                uf.union(node, others[i]);
                placed += 1;
            }
        }
    }
    uf.component_count() == 1
}

/// Estimate the probability that the hybrid graph is connected.
pub fn connectivity_probability(
    n: usize,
    d_s: usize,
    d_r: usize,
    clusters: usize,
    beta: f64,
    fingerprint_dim: usize,
    cluster_spread: f64,
    trials: u32,
    seed: u64,
) -> Result<f64, ConnectivityError> {
    validate_point(n, d_s, d_r, clusters, trials)?;
    let connected: u32 = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = derive_rng(seed, u64::from(trial), "conn-trial");
            u32::from(trial_is_connected(
                n,
                d_s,
                d_r,
                clusters,
                beta,
                fingerprint_dim,
                cluster_spread,
                &mut rng,
            ))
        })
        .sum();
    Ok(f64::from(connected) / f64::from(trials))
}

/// Evaluate the full (d_s, d_r) cross product. Grid points get derived seeds,
/// so the sweep is deterministic however it is scheduled.
pub fn sweep_grid(grid: &ConnectivityGrid) -> Result<Vec<GridPointResult>, ConnectivityError> {
    let mut points = Vec::new();
    for &d_s in &grid.d_s_values {
        for &d_r in &grid.d_r_values {
            validate_point(grid.n, d_s, d_r, grid.clusters, grid.trials)?;
            points.push((d_s, d_r));
        }
    }
    points
        .into_iter()
        .map(|(d_s, d_r)| {
            let point_seed = derive_seed(grid.seed, (d_s * 4096 + d_r) as u64, "conn-point");
            let probability = connectivity_probability(
                grid.n,
                d_s,
                d_r,
                grid.clusters,
                grid.beta,
                grid.fingerprint_dim,
                grid.cluster_spread,
                grid.trials,
                point_seed,
            )?;
            let std_error = (probability * (1.0 - probability) / f64::from(grid.trials)).sqrt();
            Ok(GridPointResult {
                n: grid.n,
                d_s,
                d_r,
                probability,
                std_error,
                trials: grid.trials,
            })
        })
        .collect()
}

pub const GRID_CSV_HEADER: &str = "n,d_s,d_r,probability,std_error,trials";

/// Write sweep results as CSV.
pub fn write_grid_csv<W: io::Write>(rows: &[GridPointResult], mut writer: W) -> io::Result<()> {
    writeln!(writer, "{GRID_CSV_HEADER}")?;
    for row in rows {
        writeln!(
            writer,
            "{},{},{},{},{},{}",
            row.n,
            row.d_s,
            row.d_r,
            crate::engine::fmt_float(row.probability),
            crate::engine::fmt_float(row.std_error),
            row.trials
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_grid() -> ConnectivityGrid {
        ConnectivityGrid {
            n: 40,
            d_s_values: vec![1],
            d_r_values: vec![2],
            trials: 50,
            clusters: 4,
            beta: 5.0,
            fingerprint_dim: 8,
            cluster_spread: 0.25,
            seed: 3,
        }
    }

    #[test]
    fn edgeless_graph_is_never_connected() {
        let p = connectivity_probability(10, 0, 0, 2, 5.0, 4, 0.25, 20, 1).unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn complete_random_degree_is_always_connected() {
        let p = connectivity_probability(12, 0, 11, 2, 5.0, 4, 0.25, 20, 1).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn small_random_set_suffices() {
        let p = connectivity_probability(100, 1, 2, 10, 5.0, 8, 0.25, 200, 7).unwrap();
        assert!(p >= 0.99, "connectivity probability {p}");
    }

    #[test]
    fn grid_point_validation() {
        assert!(connectivity_probability(10, 6, 4, 2, 5.0, 4, 0.25, 10, 1).is_err());
        assert!(connectivity_probability(1, 0, 0, 2, 5.0, 4, 0.25, 10, 1).is_err());
        assert!(connectivity_probability(10, 1, 1, 0, 5.0, 4, 0.25, 10, 1).is_err());
        assert!(connectivity_probability(10, 1, 1, 2, 5.0, 4, 0.25, 0, 1).is_err());
    }

    #[test]
    fn sweep_emits_one_row_per_point() {
        let rows = sweep_grid(&small_grid()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].d_s, rows[0].d_r), (1, 2));
        assert!(rows[0].std_error >= 0.0);
    }

    #[test]
    fn sweep_is_deterministic() {
        let a = sweep_grid(&small_grid()).unwrap();
        let b = sweep_grid(&small_grid()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn homogeneous_fingerprints_make_bias_irrelevant() {
        // With one cluster the biased stage sees near-identical similarities,
        // so biased and random selection should connect about equally often.
        let n = 60;
        let biased = connectivity_probability(n, 2, 0, 1, 5.0, 8, 0.25, 400, 11).unwrap();
        let random = connectivity_probability(n, 0, 2, 1, 5.0, 8, 0.25, 400, 11).unwrap();
        assert!(
            (biased - random).abs() <= 0.05,
            "biased {biased} vs random {random}"
        );
    }

    #[test]
    fn grid_csv_schema() {
        let rows = sweep_grid(&small_grid()).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("n,d_s,d_r,probability,std_error,trials\n"));
        assert_eq!(text.lines().count(), 2);
    }
}
