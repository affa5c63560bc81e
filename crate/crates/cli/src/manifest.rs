use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Record of one subcommand invocation, written into its output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: Value,
    /// Digest of the compact JSON encoding of `config`.
    pub config_hash: String,
    /// Input path -> sha256.
    pub inputs: BTreeMap<String, String>,
    /// Artifact file name (relative to the run directory) -> sha256.
    pub artifacts: BTreeMap<String, String>,
    /// Stage -> seconds.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        RunManifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            config_hash,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            timings: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::internal(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    /// Paths whose current digest differs from the recorded one. Artifacts
    /// resolve against `dir`.
    pub fn mismatches(&self, dir: &Path) -> Vec<String> {
        let inputs = self.inputs.iter().map(|(p, d)| (PathBuf::from(p), d));
        let artifacts = self.artifacts.iter().map(|(p, d)| (dir.join(p), d));
        inputs
            .chain(artifacts)
            .filter(|(p, d)| sha256_file(p).ok().as_ref() != Some(*d))
            .map(|(p, _)| p.display().to_string())
            .collect()
    }
}

/// Output directory writer that records each artifact's digest.
pub struct RunDir {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunDir {
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::internal(e.to_string()))?;
        self.write(name, (text + "\n").as_bytes())
    }

    /// Records a file written by someone else.
    pub fn record(&mut self, name: &str) -> Result<(), CliError> {
        let digest = sha256_file(&self.path(name))?;
        self.manifest.artifacts.insert(name.to_string(), digest);
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        self.manifest.write(&self.dir)
    }
}
