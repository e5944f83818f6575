//! Versioned binary checkpoint.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "PAYDPICK" | u32 version
//! u32 n, then n × (str key, str value)          config and provenance
//! u32 m, then m × (str name, u32 rank, rank × u64 dim)
//! f32 parameter values, manifest order
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError, Parameters};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PAYDPICK";
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{field} mismatch: expected {expected}, found {found}")]
    VersionMismatch { field: String, expected: String, found: String },
    #[error("corrupt checkpoint: {0}")]
    CorruptManifest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint i/o on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Parameters<f32>,
    /// Seed of the training run that produced the weights, if any.
    pub train_seed: Option<u64>,
}

fn corrupt(m: impl Into<String>) -> CheckpointError {
    CheckpointError::CorruptManifest(m.into())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("non-UTF-8 string"))
    }
}

impl Checkpoint {
    pub fn new(model: &Model, train_seed: Option<u64>) -> Self {
        Self { config: model.config.clone(), params: model.params.clone(), train_seed }
    }

    pub fn model(&self) -> Result<Model, ModelError> {
        Model::from_parameters(self.config.clone(), self.params.clone())
    }

    /// Errors unless the stored head has `expected` labels.
    pub fn require_num_labels(&self, expected: usize) -> Result<(), CheckpointError> {
        if self.config.num_labels != expected {
            return Err(CheckpointError::VersionMismatch {
                field: "num_labels".into(),
                expected: expected.to_string(),
                found: self.config.num_labels.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.count() * 4 + 4096);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());

        let mut kv: Vec<(String, String)> = match serde_json::to_value(&self.config).expect("config serializes") {
            serde_json::Value::Object(map) => map.into_iter().map(|(k, v)| (format!("config.{k}"), v.to_string())).collect(),
            _ => unreachable!("config is a struct"),
        };
        if let Some(s) = self.train_seed {
            kv.push(("provenance.train_seed".into(), s.to_string()));
        }
        out.extend_from_slice(&(kv.len() as u32).to_le_bytes());
        for (k, v) in &kv {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }

        out.extend_from_slice(&(self.params.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.params.entries {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for (_, t) in &self.params.entries {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing checkpoint header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                field: "format_version".into(),
                expected: FORMAT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }

        let mut cur = Cursor { buf: body, pos: 12 };
        let mut config = serde_json::Map::new();
        let mut train_seed = None;
        for _ in 0..cur.u32()? {
            let (k, v) = (cur.str()?, cur.str()?);
            if let Some(field) = k.strip_prefix("config.") {
                let value = serde_json::from_str(&v).map_err(|e| corrupt(format!("config value {k}: {e}")))?;
                config.insert(field.to_string(), value);
            } else if k == "provenance.train_seed" {
                train_seed = Some(v.parse().map_err(|_| corrupt("bad train seed"))?);
            }
        }
        let config: ModelConfig = serde_json::from_value(serde_json::Value::Object(config))
            .map_err(|e| corrupt(format!("config: {e}")))?;
        config.validate()?;

        let count = cur.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = cur.str()?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            manifest.push((name, shape));
        }
        let mut entries = Vec::with_capacity(manifest.len());
        for (name, shape) in manifest {
            let n: usize = shape.iter().product();
            let raw = cur.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(&shape, data).map_err(|e| corrupt(e.to_string()))?;
            entries.push((name, t));
        }
        if cur.pos != body.len() {
            return Err(corrupt("trailing bytes after parameters"));
        }
        let params = Parameters { entries };
        params.check(&config).map_err(|e| corrupt(e.to_string()))?;
        Ok(Self { config, params, train_seed })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        Self::from_bytes(&bytes)
    }
}
