//! `dlsim run`: execute one experiment and write its artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use dlsim_core::engine::{run_experiment, write_metrics_csv, write_per_node_csv};

use super::{ensure_out_dir, load_experiment_config};
use crate::manifest::Manifest;
use crate::{CliError, CliResult};

pub fn execute(config_path: &Path, out: &Path, seed_override: Option<u64>, dump_topology: bool) -> CliResult {
    let mut config = load_experiment_config(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    if dump_topology {
        config.record_topology = true;
    }
    ensure_out_dir(out)?;

    let manifest = Manifest::incomplete("run", config.clone()).with_seed(config.seed);
    manifest.write(out)?;

    log::info!(
        "running {} for {} rounds on {} nodes (seed {})",
        config.protocol.name(),
        config.rounds,
        config.n,
        config.seed
    );
    let result = run_experiment(&config).map_err(|e| CliError::Runtime(e.into()))?;

    let mut artifacts = vec!["metrics.csv".to_string(), "per_node_final.csv".to_string()];
    {
        let file = BufWriter::new(File::create(out.join("metrics.csv"))?);
        write_metrics_csv(&result.metrics, file)?;
    }
    {
        let file = BufWriter::new(File::create(out.join("per_node_final.csv"))?);
        write_per_node_csv(&result.final_accuracies, &result.final_losses, file)?;
    }
    if let Some(log) = &result.topology_log {
        let mut file = BufWriter::new(File::create(out.join("topology.csv"))?);
        writeln!(file, "round,src,dst")?;
        for (round, edges) in log {
            for (src, dst) in edges {
                writeln!(file, "{round},{src},{dst}")?;
            }
        }
        artifacts.push("topology.csv".to_string());
    }

    log::info!(
        "finished: final mean accuracy {:.2}%, {} messages",
        result.metrics.last().map_or(0.0, |m| m.mean_accuracy),
        result.total_messages
    );
    manifest.complete(artifacts, out)
}
