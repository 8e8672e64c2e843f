//! The run manifest: one JSON record per invocation, sufficient to reproduce
//! its outputs. Everything except `timings` is deterministic given the inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Timing {
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub seconds: f64,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, InputFile>,
    pub seed: Option<u64>,
    pub timings: Vec<Timing>,
    pub outputs: Vec<PathBuf>,
    /// Command-specific results (metrics, simulation parameters).
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: impl Serialize, seed: Option<u64>) -> Result<Self, CliError> {
        Ok(RunManifest {
            command: command.to_string(),
            config: to_value(config)?,
            inputs: BTreeMap::new(),
            seed,
            timings: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        })
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        let sha256 = sha256_file(path)?;
        self.inputs.insert(
            role.to_string(),
            InputFile {
                path: path.to_path_buf(),
                sha256,
            },
        );
        Ok(())
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.timings.push(Timing {
            stage: stage.to_string(),
            round: None,
            count: None,
            seconds,
        });
    }

    pub fn set_details(&mut self, details: impl Serialize) -> Result<(), CliError> {
        self.details = to_value(details)?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Internal(e.to_string()))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

pub fn to_value(v: impl Serialize) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `pred.csv` → `pred.manifest.json`, next to the output file.
pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}
