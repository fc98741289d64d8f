//! Run manifests: every file-producing command records its resolved
//! configuration, a hash of it, the seed and its outputs next to the primary
//! output. Manifests contain no timestamps, so reruns are byte-identical.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// Worker threads requested (execution detail; results never depend on it).
    pub threads: Option<usize>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        seed: u64,
        threads: Option<usize>,
        config: serde_json::Value,
        outputs: &[&Path],
    ) -> Self {
        let canonical = serde_json::to_string(&config).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let config_sha256 = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads,
            config,
            config_sha256,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        }
    }

    /// Write `<primary output>.manifest.json`.
    pub fn write_next_to(&self, primary_output: &Path) -> Result<PathBuf, CliError> {
        let mut name = primary_output.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::numeric(format!("manifest serialization failed: {e}")))?;
        std::fs::write(&path, text.as_bytes())
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
