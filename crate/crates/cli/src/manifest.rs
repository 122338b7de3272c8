use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Audit record written next to the outputs of every command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub library_version: String,
    /// Input path to hex SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub duration_seconds: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    clock: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: impl Serialize, seed: Option<u64>) -> CliResult<Self> {
        Ok(ManifestBuilder {
            manifest: RunManifest {
                command: command.to_owned(),
                config: serde_json::to_value(config)?,
                seed,
                library_version: env!("CARGO_PKG_VERSION").to_owned(),
                inputs: BTreeMap::new(),
                outputs: Vec::new(),
                started_unix: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                duration_seconds: 0.0,
            },
            clock: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        self.manifest.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn finish(mut self, path: &Path) -> CliResult<()> {
        self.manifest.duration_seconds = self.clock.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
    }
}
