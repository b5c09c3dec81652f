use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::experiment::TrialSummary;
use crate::reproduce::Check;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    seed: u64,
    files: &'a [ManifestEntry],
}

/// Writes files under one root and remembers their hashes.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ArtifactWriter {
    pub fn new(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|source| HarnessError::Output {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(rel);
        let io_err = |source| HarnessError::Output {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        std::fs::write(&path, bytes).map_err(io_err)?;
        self.entries.retain(|e| e.path != rel);
        self.entries.push(ManifestEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len(),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(dcpriv_core::Error::from)?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes `manifest.json` listing everything written so far, sorted by path.
    pub fn finish(mut self, name: &str, seed: u64) -> Result<(PathBuf, Vec<ManifestEntry>)> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        let entries = std::mem::take(&mut self.entries);
        let manifest = Manifest {
            name,
            seed,
            files: &entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(dcpriv_core::Error::from)?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text).map_err(|source| HarnessError::Output {
            path: path.clone(),
            source,
        })?;
        Ok((path, entries))
    }
}

/// Everything a run wrote, plus what it measured.
#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub root: PathBuf,
    pub trajectories: Vec<PathBuf>,
    pub attack_reports: Vec<PathBuf>,
    pub summary: Option<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub tables: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub files: Vec<ManifestEntry>,
    pub trials: Vec<TrialSummary>,
    pub checks: Vec<Check>,
    /// Observations that are reported but not asserted.
    pub notes: Vec<String>,
}

impl RunArtifacts {
    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}
