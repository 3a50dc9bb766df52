use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Merged options; replay feeds these back through the option parser.
    pub config: BTreeMap<String, String>,
    /// Fully resolved configuration objects, for reading only.
    pub resolved: serde_json::Value,
    pub seeds: Seeds,
    /// Absolute input paths.
    pub inputs: Vec<FileRecord>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub base_seed: Option<u64>,
    pub rule: String,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn record_inputs(paths: &[PathBuf]) -> Result<Vec<FileRecord>, CliError> {
    paths
        .iter()
        .map(|p| {
            let abs = std::fs::canonicalize(p).map_err(|e| CliError::io(p, e))?;
            Ok(FileRecord {
                path: abs.display().to_string(),
                sha256: sha256_file(&abs)?,
            })
        })
        .collect()
}

pub fn record_outputs(out_dir: &Path, names: &[String]) -> Result<Vec<FileRecord>, CliError> {
    names
        .iter()
        .map(|n| {
            Ok(FileRecord {
                path: n.clone(),
                sha256: sha256_file(&out_dir.join(n))?,
            })
        })
        .collect()
}

impl RunManifest {
    pub fn write(&self, out_dir: &Path) -> Result<(), CliError> {
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))
    }
}
