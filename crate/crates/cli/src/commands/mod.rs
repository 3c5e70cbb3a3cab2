pub mod compare;
pub mod connectivity;
pub mod run;

use std::fs;
use std::path::Path;

use dlsim_core::engine::ExperimentConfig;

use crate::{CliError, CliResult};

/// Load and validate an experiment config; parse and validation failures are
/// configuration errors (exit code 2) whose messages name the bad field.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config
        .validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(config)
}

pub fn ensure_out_dir(out: &Path) -> CliResult {
    fs::create_dir_all(out)?;
    Ok(())
}
