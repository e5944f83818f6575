//! Per-run manifest: effective config, seed, and SHA-256 of every input and
//! output file.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileDigest { path: path.display().to_string(), bytes: bytes.len() as u64, sha256: sha256_hex(&bytes) })
}

/// Output directory plus the manifest being accumulated for this run.
pub struct RunDir {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, argv: Vec<String>) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest: Manifest {
                tool: "paydpi",
                version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                argv,
                seed: None,
                config: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(digest_file(path)?);
        Ok(())
    }

    /// Records a file already written under the run directory.
    pub fn record(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.path(rel);
        let mut d = digest_file(&path)?;
        d.path = rel.to_string();
        self.manifest.outputs.push(d);
        Ok(path)
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(rel)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let name = format!("manifest.{}.json", self.manifest.command);
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
