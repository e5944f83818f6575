//! Synthetic motif corpus: benign payloads are uniform random bytes,
//! malicious ones carry a fixed motif at a random offset.

use paydpi::dataset::LabeledPayload;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_MOTIF: [u8; 6] = [0xde, 0xad, 0xbe, 0xef, 0x13, 0x37];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub samples: usize,
    #[serde(with = "hex::serde")]
    pub motif: Vec<u8>,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { samples: 2000, motif: DEFAULT_MOTIF.to_vec(), min_len: 40, max_len: 120, seed: 1 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::InvalidSpec(m));
        if self.motif.is_empty() {
            return bad("motif is empty".into());
        }
        if self.motif.len() >= self.min_len {
            return bad(format!("motif length {} must be below min_len {}", self.motif.len(), self.min_len));
        }
        if self.min_len > self.max_len {
            return bad(format!("min_len {} exceeds max_len {}", self.min_len, self.max_len));
        }
        if self.samples == 0 || self.samples % 2 != 0 {
            return bad(format!("samples must be a positive even number, got {}", self.samples));
        }
        Ok(())
    }
}

/// Half benign (label 0), half malicious (label 1), shuffled.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Vec<LabeledPayload>, CliError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.samples / 2;
    let mut out = Vec::with_capacity(spec.samples);
    for label in [0u32, 1] {
        for _ in 0..half {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut payload = vec![0u8; len];
            rng.fill_bytes(&mut payload);
            if label == 1 {
                let at = rng.gen_range(0..=len - spec.motif.len());
                payload[at..at + spec.motif.len()].copy_from_slice(&spec.motif);
            }
            out.push(LabeledPayload::new(payload, label, None));
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
