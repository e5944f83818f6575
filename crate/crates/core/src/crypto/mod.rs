//! Payload encryption experiments.
//!
//! Every payload of a labeled dataset is encrypted under AES-256-CBC or a
//! Fernet token, the result goes through the usual split/train/evaluate
//! path, and the accuracies are compared with the plaintext baseline.

pub mod aes;
pub mod fernet;

use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{split, DatasetError, LabeledPayload, DEFAULT_RATIOS};
use crate::eval::{evaluate, EvalError, MetricsReport, Mode};
use crate::model::{Model, ModelConfig, ModelError};
use crate::train::{train, TrainConfig, TrainError};

pub use aes::{aes256_cbc_decrypt, aes256_cbc_encrypt, Aes};
pub use fernet::{decrypt as fernet_decrypt, encrypt as fernet_encrypt};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CryptoError {
    #[error("key must be {expected} bytes, got {found}")]
    BadKeyLength { expected: usize, found: usize },
    #[error("IV must be 16 bytes, got {0}")]
    BadIvLength(usize),
    #[error("invalid PKCS#7 padding")]
    BadPadding,
    #[error("ciphertext length {0} is not a positive multiple of 16")]
    CiphertextLength(usize),
    #[error("invalid token: {0}")]
    InvalidToken(&'static str),
    #[error("invalid cipher spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Aes256Cbc,
    Fernet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum IvPolicy {
    /// A distinct IV per record, derived from the seed and record index.
    FreshRandomPerPayload,
    Fixed {
        #[serde(with = "crate::hexser")]
        iv: Vec<u8>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPolicy {
    PerRun,
    PerPayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum TimestampPolicy {
    /// Current time, read per record.
    WallClock,
    Fixed { timestamp: u64 },
    /// Class `c` is stamped `base + c·band`, as if each class had been
    /// encrypted in its own session. `base` defaults to the current time.
    PerClassOffset { base: Option<u64>, band: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherSpec {
    pub algorithm: Algorithm,
    #[serde(with = "crate::hexser")]
    pub key: Vec<u8>,
    pub key_policy: KeyPolicy,
    pub iv_policy: IvPolicy,
    pub timestamp_policy: TimestampPolicy,
    /// AES only: prefix each ciphertext with its IV.
    pub include_iv_in_output: bool,
    /// Zero-pad every plaintext to the longest one before encrypting.
    pub equalize_lengths: bool,
    pub seed: u64,
}

const KEY_STREAM: u64 = 0x6b65_7973;
const IV_STREAM: u64 = 0x6976_7331;

fn derived_bytes(seed: u64, domain: u64, index: u64, n: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(index);
    let mut out = vec![0u8; n];
    rng.fill_bytes(&mut out);
    out
}

fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl CipherSpec {
    /// AES-256-CBC with a seed-derived run key and fresh per-record IVs.
    pub fn aes256(seed: u64) -> Self {
        Self {
            algorithm: Algorithm::Aes256Cbc,
            key: derived_bytes(seed, KEY_STREAM, u64::MAX, 32),
            key_policy: KeyPolicy::PerRun,
            iv_policy: IvPolicy::FreshRandomPerPayload,
            timestamp_policy: TimestampPolicy::WallClock,
            include_iv_in_output: false,
            equalize_lengths: false,
            seed,
        }
    }

    pub fn fernet(seed: u64, timestamp_policy: TimestampPolicy) -> Self {
        Self { algorithm: Algorithm::Fernet, timestamp_policy, ..Self::aes256(seed) }
    }

    pub fn validate(&self) -> Result<(), CryptoError> {
        if self.key.len() != 32 {
            return Err(CryptoError::BadKeyLength { expected: 32, found: self.key.len() });
        }
        if let IvPolicy::Fixed { iv } = &self.iv_policy {
            if iv.len() != 16 {
                return Err(CryptoError::BadIvLength(iv.len()));
            }
        }
        if self.include_iv_in_output && self.algorithm == Algorithm::Fernet {
            return Err(CryptoError::InvalidSpec("include_iv_in_output applies to AES only; Fernet tokens always carry the IV".into()));
        }
        Ok(())
    }

    /// The spec without its key, as JSON.
    pub fn redacted(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("key");
        }
        v
    }

    /// SHA-256 over the redacted spec; identifies a configuration without
    /// revealing the key.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.redacted().to_string().as_bytes()))
    }

    fn key_for(&self, index: u64) -> Vec<u8> {
        match self.key_policy {
            KeyPolicy::PerRun => self.key.clone(),
            KeyPolicy::PerPayload => {
                let mut seed_bytes = [0u8; 8];
                seed_bytes.copy_from_slice(&Sha256::digest(&self.key)[..8]);
                derived_bytes(self.seed ^ u64::from_le_bytes(seed_bytes), KEY_STREAM, index, 32)
            }
        }
    }

    fn iv_for(&self, index: u64) -> Vec<u8> {
        match &self.iv_policy {
            IvPolicy::FreshRandomPerPayload => derived_bytes(self.seed, IV_STREAM, index, 16),
            IvPolicy::Fixed { iv } => iv.clone(),
        }
    }

    fn timestamp_for(&self, label: u32, now: u64) -> u64 {
        match self.timestamp_policy {
            TimestampPolicy::WallClock => now_secs(),
            TimestampPolicy::Fixed { timestamp } => timestamp,
            TimestampPolicy::PerClassOffset { base, band } => base.unwrap_or(now) + u64::from(label) * band,
        }
    }

    /// Encrypts one record. `index` selects the derived IV (and key, per
    /// payload), so the result does not depend on processing order.
    pub fn encrypt_one(&self, plaintext: &[u8], label: u32, index: u64, now: u64) -> Result<Vec<u8>, CryptoError> {
        let key = self.key_for(index);
        let iv = self.iv_for(index);
        match self.algorithm {
            Algorithm::Aes256Cbc => {
                let body = aes256_cbc_encrypt(plaintext, &key, &iv)?;
                Ok(if self.include_iv_in_output { [iv, body].concat() } else { body })
            }
            Algorithm::Fernet => fernet_encrypt(plaintext, &key, self.timestamp_for(label, now), &iv),
        }
    }
}

/// Ciphertext records plus the fingerprint of the spec that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedDataset {
    pub records: Vec<LabeledPayload>,
    pub fingerprint: String,
    pub spec: serde_json::Value,
}

impl EncryptedDataset {
    /// Sidecar manifest content; never includes the key.
    pub fn manifest_json(&self) -> String {
        let doc = serde_json::json!({
            "fingerprint": self.fingerprint,
            "spec": self.spec,
            "records": self.records.len(),
        });
        serde_json::to_string_pretty(&doc).expect("manifest serializes")
    }
}

/// Encrypts every payload in parallel; labels and order are preserved.
pub fn encrypt_dataset(data: &[LabeledPayload], spec: &CipherSpec) -> Result<EncryptedDataset, CryptoError> {
    spec.validate()?;
    let width = if spec.equalize_lengths { data.iter().map(|d| d.payload.len()).max().unwrap_or(0) } else { 0 };
    let now = now_secs();
    let records = data
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let ct = if d.payload.len() < width {
                let mut padded = d.payload.clone();
                padded.resize(width, 0);
                spec.encrypt_one(&padded, d.label, i as u64, now)?
            } else {
                spec.encrypt_one(&d.payload, d.label, i as u64, now)?
            };
            Ok(LabeledPayload { payload: ct, label: d.label, category: d.category.clone() })
        })
        .collect::<Result<Vec<_>, CryptoError>>()?;
    Ok(EncryptedDataset { records, fingerprint: spec.fingerprint(), spec: spec.redacted() })
}

#[derive(Debug, Error)]
pub enum AblationError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One row of the comparison; `spec = None` is the plaintext baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub spec: Option<CipherSpec>,
}

impl Condition {
    pub fn plaintext() -> Self {
        Self { name: "plaintext".into(), spec: None }
    }

    pub fn encrypted(name: impl Into<String>, spec: CipherSpec) -> Self {
        Self { name: name.into(), spec: Some(spec) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub condition: String,
    pub fingerprint: Option<String>,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn render_table(&self) -> String {
        let mut out = MetricsReport::table_header();
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.report.table_row(&r.condition));
            out.push('\n');
        }
        out
    }

    pub fn accuracy(&self, condition: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.condition == condition).map(|r| r.report.accuracy)
    }
}

/// Trains and evaluates a fresh model per condition. Every condition
/// splits with `split_seed`, so the same source records land in the same
/// partitions across conditions.
pub fn run_ablation(
    source: &[LabeledPayload],
    conditions: &[Condition],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    split_seed: u64,
    mode: Mode,
) -> Result<AblationReport, AblationError> {
    let mut rows = Vec::with_capacity(conditions.len());
    for c in conditions {
        let (data, fingerprint) = match &c.spec {
            None => (source.to_vec(), None),
            Some(spec) => {
                let enc = encrypt_dataset(source, spec)?;
                (enc.records, Some(enc.fingerprint))
            }
        };
        let parts = split(&data, DEFAULT_RATIOS, split_seed)?;
        let outcome = train(Model::new(model_config.clone())?, &parts, train_config)?;
        let model = outcome.checkpoint.model()?;
        let mut report = evaluate(&model, &parts.test, mode, 64)?;
        report.dataset_id = fingerprint.clone().or_else(|| Some("plaintext".into()));
        log::info!("ablation {}: accuracy {:.4}", c.name, report.accuracy);
        rows.push(AblationRow { condition: c.name.clone(), fingerprint, report });
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> Vec<LabeledPayload> {
        (0..50u8).map(|i| LabeledPayload::new(vec![i; (i % 7) as usize + 1], u32::from(i % 2), None)).collect()
    }

    #[test]
    fn fixed_iv_is_deterministic() {
        let spec = CipherSpec { iv_policy: IvPolicy::Fixed { iv: vec![5; 16] }, ..CipherSpec::aes256(1) };
        assert_eq!(encrypt_dataset(&data(), &spec).unwrap(), encrypt_dataset(&data(), &spec).unwrap());
    }

    #[test]
    fn fingerprint_ignores_key() {
        let a = CipherSpec::aes256(1);
        let b = CipherSpec { key: vec![0; 32], ..a.clone() };
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert!(!a.redacted().to_string().contains(&hex::encode(&a.key)));
        assert_ne!(a.fingerprint(), CipherSpec { include_iv_in_output: true, ..a.clone() }.fingerprint());
    }

    #[test]
    fn iv_prefix_and_equalization() {
        let spec = CipherSpec { include_iv_in_output: true, equalize_lengths: true, ..CipherSpec::aes256(2) };
        let out = encrypt_dataset(&data(), &spec).unwrap();
        assert!(out.records.iter().all(|r| r.payload.len() == 16 + 16));
        let iv = &out.records[3].payload[..16];
        let plain = aes256_cbc_decrypt(&out.records[3].payload[16..], &spec.key, iv).unwrap();
        assert_eq!(plain, [vec![3u8; 4], vec![0; 3]].concat());
    }

    #[test]
    fn per_class_timestamps() {
        let spec = CipherSpec::fernet(3, TimestampPolicy::PerClassOffset { base: Some(1000), band: 86_400 });
        let out = encrypt_dataset(&data(), &spec).unwrap();
        for r in &out.records {
            let (ts, _) = fernet_decrypt(&r.payload, &spec.key).unwrap();
            assert_eq!(ts, 1000 + u64::from(r.label) * 86_400);
        }
    }

    #[test]
    fn per_payload_keys_differ() {
        let spec = CipherSpec { key_policy: KeyPolicy::PerPayload, ..CipherSpec::aes256(4) };
        assert_ne!(spec.key_for(0), spec.key_for(1));
        assert_eq!(spec.key_for(7), spec.key_for(7));
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(CipherSpec { key: vec![1; 16], ..CipherSpec::aes256(0) }.validate().is_err());
        assert!(CipherSpec { iv_policy: IvPolicy::Fixed { iv: vec![0; 4] }, ..CipherSpec::aes256(0) }.validate().is_err());
    }
}
