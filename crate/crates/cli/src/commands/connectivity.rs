//! `dlsim connectivity`: Monte-Carlo sweep over (d_s, d_r) grid points.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use dlsim_core::connectivity::{sweep_grid, write_grid_csv, ConnectivityGrid};

use super::ensure_out_dir;
use crate::manifest::Manifest;
use crate::{CliError, CliResult};

pub fn execute(config_path: &Path, out: &Path) -> CliResult {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let grid: ConnectivityGrid = toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", config_path.display())))?;

    ensure_out_dir(out)?;
    let manifest = Manifest::incomplete("connectivity", grid.clone()).with_seed(grid.seed);
    manifest.write(out)?;

    log::info!(
        "sweeping n={} over {} x {} grid points, {} trials each",
        grid.n,
        grid.d_s_values.len(),
        grid.d_r_values.len(),
        grid.trials
    );
    let rows = match sweep_grid(&grid) {
        Ok(rows) => rows,
        Err(e @ dlsim_core::connectivity::ConnectivityError::InvalidGridPoint(_)) => {
            return Err(CliError::Config(e.to_string()));
        }
        Err(e) => return Err(CliError::Runtime(e.into())),
    };
    write_grid_csv(&rows, BufWriter::new(File::create(out.join("connectivity.csv"))?))?;

    manifest.complete(vec!["connectivity.csv".to_string()], out)
}
