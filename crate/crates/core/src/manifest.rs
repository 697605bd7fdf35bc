//! Provenance chain written by every CLI stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io;

pub const MANIFEST_FILE: &str = "run-manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub config_hash: Option<String>,
    /// Input path → SHA-256 of its content.
    pub input_digests: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub started_at: u64,
    pub finished_at: u64,
    pub outputs: Vec<String>,
}

/// Entries from the first stage to the latest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub entries: Vec<ManifestEntry>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    /// Merge the chains found next to each input (first occurrence wins).
    pub fn upstream_of(inputs: &[&Path]) -> Result<Self> {
        let mut merged = RunManifest::default();
        for input in inputs {
            let dir = if input.is_dir() { input.to_path_buf() } else { input.parent().map(Path::to_path_buf).unwrap_or_default() };
            let path = dir.join(MANIFEST_FILE);
            if path.is_file() {
                let chain: RunManifest = io::read_json(&path)?;
                for e in chain.entries {
                    if !merged.entries.contains(&e) {
                        merged.entries.push(e);
                    }
                }
            }
        }
        Ok(merged)
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        io::write_json(&path, self)?;
        Ok(path)
    }
}

/// Collects one stage's provenance while it runs.
pub struct StageRecorder {
    entry: ManifestEntry,
    upstream: RunManifest,
}

impl StageRecorder {
    pub fn start(command: &str, inputs: &[&Path], config_hash: Option<String>, seed: Option<u64>) -> Result<Self> {
        let mut input_digests = BTreeMap::new();
        for input in inputs {
            if input.exists() {
                input_digests.insert(input.display().to_string(), io::digest_path(input)?);
            }
        }
        Ok(StageRecorder {
            entry: ManifestEntry {
                command: command.to_string(),
                config_hash,
                input_digests,
                seed,
                started_at: unix_now(),
                finished_at: 0,
                outputs: Vec::new(),
            },
            upstream: RunManifest::upstream_of(inputs)?,
        })
    }

    pub fn output(&mut self, path: &Path) {
        self.entry.outputs.push(path.display().to_string());
    }

    pub fn finish(mut self, out_dir: &Path) -> Result<PathBuf> {
        self.entry.finished_at = unix_now();
        let mut manifest = self.upstream;
        manifest.entries.push(self.entry);
        manifest.write(out_dir)
    }
}
