//! Run manifests: what a command was asked to do, what it read and wrote.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub started_unix_ms: u64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved configuration, after flags and config file.
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub timings: Timings,
}

pub fn hash_file(path: &Path) -> Result<Artifact> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Artifact {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        bytes: bytes.len() as u64,
    })
}

/// Every file under `dir` except the manifest itself, paths relative to `dir`.
pub fn hash_tree(dir: &Path) -> Result<Vec<Artifact>> {
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry?;
        if !entry.file_type().is_file() || entry.path() == dir.join(MANIFEST_FILE) {
            continue;
        }
        let mut a = hash_file(entry.path())?;
        a.path = entry.path().strip_prefix(dir).unwrap_or(entry.path()).display().to_string();
        out.push(a);
    }
    Ok(out)
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    inputs: Vec<Artifact>,
    started: Instant,
    started_unix_ms: u64,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs: Vec::new(),
            started: Instant::now(),
            started_unix_ms: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0),
        })
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    /// Hashes everything in `out_dir` and writes `manifest.json` there.
    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command,
            config: self.config,
            inputs: self.inputs,
            outputs: hash_tree(out_dir)?,
            timings: Timings { started_unix_ms: self.started_unix_ms, wall_seconds: self.started.elapsed().as_secs_f64() },
        };
        let path = out_dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_every_output_but_itself() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("frames")).unwrap();
        std::fs::write(dir.path().join("a.json"), b"{}").unwrap();
        std::fs::write(dir.path().join("frames/0.png"), b"png").unwrap();
        let path = ManifestBuilder::new("test", serde_json::json!({"k": 1})).unwrap().finish(dir.path()).unwrap();
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
        let paths: Vec<&str> = m.outputs.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(paths, ["a.json", "frames/0.png"]);
        assert_eq!(m.outputs[0].sha256, hex::encode(Sha256::digest(b"{}")));
    }
}
