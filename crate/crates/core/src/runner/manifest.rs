//! Content-hashed record of everything a command wrote into a directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamAddr {
    pub master_seed: u64,
    pub stream_key: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedState {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedStatus {
    pub seed: u64,
    pub status: SeedState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_hash: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub streams: BTreeMap<String, StreamAddr>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<SeedStatus>,
    /// Kind-specific facts (sweep selection, compared runs, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
    /// Relative path (forward slashes) to SHA-256 hex digest.
    pub artifacts: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else if path.strip_prefix(root).ok() != Some(Path::new(MANIFEST_FILE)) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes every file under `dir` except the top-level manifest.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|p| {
            let rel = p
                .strip_prefix(dir)
                .expect("walked path is under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect::<Vec<_>>()
                .join("/");
            Ok((rel, sha256_hex(&std::fs::read(&p)?)))
        })
        .collect()
}

impl Manifest {
    pub fn new(kind: &str) -> Self {
        Manifest {
            kind: kind.into(),
            ..Default::default()
        }
    }

    /// Hashes the directory contents and writes `manifest.json`.
    pub fn seal(mut self, dir: &Path) -> Result<Manifest> {
        self.artifacts = hash_tree(dir)?;
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(self)
    }

    pub fn read(dir: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Recomputes every artifact hash; returns the number of files checked.
pub fn verify_manifest(dir: &Path) -> Result<usize> {
    let manifest = Manifest::read(dir)?;
    let actual = hash_tree(dir)?;
    let mut problems = Vec::new();
    for (path, want) in &manifest.artifacts {
        match actual.get(path) {
            None => problems.push(format!("{path}: missing")),
            Some(got) if got != want => problems.push(format!("{path}: hash mismatch")),
            _ => {}
        }
    }
    for path in actual.keys().filter(|p| !manifest.artifacts.contains_key(*p)) {
        problems.push(format!("{path}: not listed"));
    }
    if problems.is_empty() {
        Ok(manifest.artifacts.len())
    } else {
        Err(Error::Validation(format!("manifest check failed: {}", problems.join("; "))))
    }
}
