//! Deep packet inspection over raw transport payload bytes.
//!
//! The pipeline turns classic PCAP captures into labeled, deduplicated
//! payload datasets, tokenizes payloads byte-for-byte, and trains a
//! transformer encoder classifier (built on the crate's own autodiff
//! engine) to separate benign from malicious traffic or to tell attack
//! categories apart. [`crypto`] re-runs the same pipeline on encrypted
//! payloads to measure how much learnable signal survives encryption.

pub mod crypto;
pub mod dataset;
pub mod eval;
pub mod model;
mod hexser;
pub mod pcap;
pub mod tensor;
pub mod tokenizer;
pub mod train;
