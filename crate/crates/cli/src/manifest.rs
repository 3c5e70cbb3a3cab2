//! Run manifests: enough metadata to reproduce a run bit-for-bit.
//!
//! The manifest is written with status "incomplete" before any data file, and
//! rewritten as "complete" only after every artifact landed, so an
//! interrupted invocation is detectable from the manifest alone.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
pub struct Manifest<C: Serialize> {
    pub status: &'static str,
    pub command: &'static str,
    pub tool_version: &'static str,
    pub created_unix_ms: u128,
    pub seed: Option<u64>,
    pub seeds: Option<Vec<u64>>,
    pub config: C,
    pub artifacts: Vec<String>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl<C: Serialize> Manifest<C> {
    pub fn incomplete(command: &'static str, config: C) -> Self {
        Manifest {
            status: "incomplete",
            command,
            tool_version: env!("CARGO_PKG_VERSION"),
            created_unix_ms: now_ms(),
            seed: None,
            seeds: None,
            config,
            artifacts: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_seeds(mut self, seeds: &[u64]) -> Self {
        self.seeds = Some(seeds.to_vec());
        self
    }

    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn complete(mut self, artifacts: Vec<String>, out_dir: &Path) -> Result<(), CliError> {
        self.status = "complete";
        self.artifacts = artifacts;
        self.write(out_dir)
    }
}
