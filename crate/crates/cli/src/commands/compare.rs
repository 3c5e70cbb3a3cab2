//! `dlsim compare`: run every protocol config across seeds and summarize.
//!
//! The summary mirrors a paper-style comparison table: per config, the mean
//! and standard deviation over seeds of final accuracy and final inter-node
//! variance, the mean rounds to reach the target accuracy, and communication
//! totals. The target accuracy for a seed is the weakest config's best mean
//! accuracy at that seed, so every config reaches it and rounds-to-target is
//! always defined.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use dlsim_core::engine::{
    fmt_float, run_experiment, write_metrics_csv, write_per_node_csv, ExperimentConfig,
};

use super::{ensure_out_dir, load_experiment_config};
use crate::manifest::Manifest;
use crate::{CliError, CliResult};

pub const SUMMARY_CSV_HEADER: &str = "config,protocol,seeds_run,final_accuracy_mean,final_accuracy_std,\
final_variance_mean,final_variance_std,rounds_to_target_mean,rounds_to_target_std,\
total_messages_mean,total_bytes_mean,failures";

struct RunRecord {
    seed: u64,
    final_accuracy: f64,
    final_variance: f64,
    best_accuracy: f64,
    accuracy_series: Vec<(u64, f64)>,
    total_messages: u64,
    total_bytes: u64,
}

struct ConfigOutcome {
    name: String,
    config: ExperimentConfig,
    runs: Vec<RunRecord>,
    failures: Vec<(u64, String)>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, variance.sqrt())
}

pub fn execute(configs_dir: &Path, out: &Path, seeds: &[u64]) -> CliResult {
    if seeds.is_empty() {
        return Err(CliError::Config("need at least one seed".into()));
    }
    let mut config_paths: Vec<PathBuf> = fs::read_dir(configs_dir)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", configs_dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
        .collect();
    config_paths.sort();
    if config_paths.is_empty() {
        return Err(CliError::Config(format!(
            "no .toml configs found in {}",
            configs_dir.display()
        )));
    }

    let mut outcomes: Vec<ConfigOutcome> = Vec::new();
    for path in &config_paths {
        let config = load_experiment_config(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        outcomes.push(ConfigOutcome {
            name,
            config,
            runs: Vec::new(),
            failures: Vec::new(),
        });
    }

    ensure_out_dir(out)?;
    let manifest = Manifest::incomplete(
        "compare",
        outcomes.iter().map(|o| o.config.clone()).collect::<Vec<_>>(),
    )
    .with_seeds(seeds);
    manifest.write(out)?;

    let mut artifacts = vec!["summary.csv".to_string()];
    for outcome in &mut outcomes {
        for &seed in seeds {
            let config = ExperimentConfig {
                seed,
                ..outcome.config.clone()
            };
            log::info!("{}: seed {seed}", outcome.name);
            match run_experiment(&config) {
                Ok(result) => {
                    let run_dir = out.join("runs").join(&outcome.name).join(format!("seed_{seed}"));
                    fs::create_dir_all(&run_dir)?;
                    write_metrics_csv(&result.metrics, BufWriter::new(File::create(run_dir.join("metrics.csv"))?))?;
                    write_per_node_csv(
                        &result.final_accuracies,
                        &result.final_losses,
                        BufWriter::new(File::create(run_dir.join("per_node_final.csv"))?),
                    )?;
                    artifacts.push(format!("runs/{}/seed_{seed}/metrics.csv", outcome.name));

                    let last = result.metrics.last().expect("engine records the final round");
                    outcome.runs.push(RunRecord {
                        seed,
                        final_accuracy: last.mean_accuracy,
                        final_variance: last.inter_node_variance,
                        best_accuracy: result
                            .metrics
                            .iter()
                            .map(|m| m.mean_accuracy)
                            .fold(f64::NEG_INFINITY, f64::max),
                        accuracy_series: result.metrics.iter().map(|m| (m.round, m.mean_accuracy)).collect(),
                        total_messages: result.total_messages,
                        total_bytes: result.total_bytes,
                    });
                }
                Err(error) => {
                    log::error!("{} seed {seed} failed: {error}", outcome.name);
                    outcome.failures.push((seed, error.to_string()));
                }
            }
        }
    }

    // Target accuracy per seed: the weakest config's best accuracy, so every
    // successful run crossed it at some round.
    let mut target_per_seed: Vec<(u64, f64)> = Vec::new();
    for &seed in seeds {
        let mut weakest_best = f64::INFINITY;
        for outcome in &outcomes {
            if let Some(run) = outcome.runs.iter().find(|r| r.seed == seed) {
                weakest_best = weakest_best.min(run.best_accuracy);
            }
        }
        if weakest_best.is_finite() {
            target_per_seed.push((seed, weakest_best));
        }
    }

    let mut summary = BufWriter::new(File::create(out.join("summary.csv"))?);
    writeln!(summary, "{SUMMARY_CSV_HEADER}")?;
    let mut total_failures = 0usize;
    for outcome in &outcomes {
        let accuracies: Vec<f64> = outcome.runs.iter().map(|r| r.final_accuracy).collect();
        let variances: Vec<f64> = outcome.runs.iter().map(|r| r.final_variance).collect();
        let rounds_to_target: Vec<f64> = outcome
            .runs
            .iter()
            .filter_map(|run| {
                let (_, target) = target_per_seed.iter().find(|(s, _)| *s == run.seed)?;
                run.accuracy_series
                    .iter()
                    .find(|(_, acc)| acc >= target)
                    .map(|(round, _)| *round as f64)
            })
            .collect();
        let messages: Vec<f64> = outcome.runs.iter().map(|r| r.total_messages as f64).collect();
        let bytes: Vec<f64> = outcome.runs.iter().map(|r| r.total_bytes as f64).collect();

        let (acc_mean, acc_std) = mean_std(&accuracies);
        let (var_mean, var_std) = mean_std(&variances);
        let (rtt_mean, rtt_std) = mean_std(&rounds_to_target);
        let (msg_mean, _) = mean_std(&messages);
        let (bytes_mean, _) = mean_std(&bytes);
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            outcome.name,
            outcome.config.protocol.name(),
            outcome.runs.len(),
            fmt_float(acc_mean),
            fmt_float(acc_std),
            fmt_float(var_mean),
            fmt_float(var_std),
            fmt_float(rtt_mean),
            fmt_float(rtt_std),
            fmt_float(msg_mean),
            fmt_float(bytes_mean),
            outcome.failures.len()
        )?;
        total_failures += outcome.failures.len();
    }
    summary.flush()?;

    manifest.complete(artifacts, out)?;
    if total_failures > 0 {
        return Err(CliError::Runtime(anyhow::anyhow!("{total_failures} runs failed (see log)")));
    }
    Ok(())
}
