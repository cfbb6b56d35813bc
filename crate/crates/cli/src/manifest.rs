use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

/// Record of one subcommand run. Paths of outputs and of internal inputs
/// are relative to the run's output directory; no timestamps are stored so
/// identical runs produce identical manifests.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub warnings: BTreeMap<String, u64>,
    pub notes: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str, config_sha256: &str) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_sha256: config_sha256.into(),
            ..Default::default()
        }
    }

    /// Records an input under `name` with the checksum of `path`.
    pub fn input(&mut self, name: impl Into<String>, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), sha256_file(path)?);
        Ok(())
    }

    /// Records an output written at `root/rel`.
    pub fn output(&mut self, root: &Path, rel: &str) -> Result<()> {
        self.outputs.insert(rel.to_string(), sha256_file(&root.join(rel))?);
        Ok(())
    }

    pub fn warn(&mut self, key: &str, count: u64) {
        if count > 0 {
            *self.warnings.entry(key.to_string()).or_default() += count;
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
