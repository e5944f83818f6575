//! Payload bytes ⇄ fixed-capacity token sequences.
//!
//! Byte value `b` is token id `b`. Two specials follow the byte alphabet:
//! [`CLS_ID`] is prepended to every sequence (its final hidden state is the
//! pooled representation) and [`PAD_ID`] fills the tail. Padding is never
//! byte 0, since 0x00 is ordinary payload content.

use thiserror::Error;

pub const UNIQUE_BYTES: usize = 256;
pub const CLS_ID: u32 = 256;
pub const PAD_ID: u32 = 257;
pub const VOCAB_SIZE: usize = UNIQUE_BYTES + 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("bad hex digit {digit:?} at index {index}")]
    BadHexDigit { digit: char, index: usize },
    #[error("hex string has odd length")]
    OddLength,
    #[error("malformed token sequence: {0}")]
    MalformedSequence(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub true_length: usize,
}

impl TokenSequence {
    pub fn capacity(&self) -> usize {
        self.ids.len()
    }

    /// Re-pads (or trims trailing padding) to a new capacity.
    pub fn with_capacity(&self, capacity: usize) -> TokenSequence {
        assert!(capacity >= self.true_length, "capacity below true length");
        let mut ids = self.ids[..self.true_length].to_vec();
        ids.resize(capacity, PAD_ID);
        let mut mask = vec![1u8; self.true_length];
        mask.resize(capacity, 0);
        TokenSequence { ids, mask, true_length: self.true_length }
    }

    pub fn validate(&self) -> Result<(), TokenizerError> {
        let bad = |m: &str| Err(TokenizerError::MalformedSequence(m.to_string()));
        if self.ids.len() != self.mask.len() {
            return bad("ids and mask lengths differ");
        }
        if self.true_length == 0 || self.true_length > self.ids.len() {
            return bad("true_length out of range");
        }
        if self.ids[0] != CLS_ID {
            return bad("first token is not CLS");
        }
        for (i, (&id, &m)) in self.ids.iter().zip(&self.mask).enumerate() {
            let real = i < self.true_length;
            if (m == 1) != real || m > 1 {
                return bad("mask disagrees with true_length");
            }
            if i > 0 && real && id >= UNIQUE_BYTES as u32 {
                return bad("special token inside payload region");
            }
            if !real && id != PAD_ID {
                return bad("non-PAD token after true_length");
            }
        }
        Ok(())
    }
}

/// `[CLS] + payload[..capacity-1]`, padded with PAD up to `capacity`.
pub fn encode(payload: &[u8], capacity: usize) -> TokenSequence {
    assert!(capacity >= 2, "capacity must leave room for CLS and one byte");
    let kept = payload.len().min(capacity - 1);
    let mut ids = Vec::with_capacity(capacity);
    ids.push(CLS_ID);
    ids.extend(payload[..kept].iter().map(|&b| u32::from(b)));
    ids.resize(capacity, PAD_ID);
    let true_length = kept + 1;
    let mut mask = vec![1u8; true_length];
    mask.resize(capacity, 0);
    TokenSequence { ids, mask, true_length }
}

pub fn decode(seq: &TokenSequence) -> Result<Vec<u8>, TokenizerError> {
    seq.validate()?;
    Ok(seq.ids[1..seq.true_length].iter().map(|&id| id as u8).collect())
}

/// Tokenizes a batch padded to its longest member, capped at `max_positions`.
pub fn encode_batch<P: AsRef<[u8]>>(payloads: &[P], max_positions: usize) -> Vec<TokenSequence> {
    let longest = payloads.iter().map(|p| p.as_ref().len() + 1).max().unwrap_or(2);
    let capacity = longest.clamp(2, max_positions.max(2));
    payloads.iter().map(|p| encode(p.as_ref(), capacity)).collect()
}

pub fn hex_encode(bytes: &[u8]) -> String {
    hex::encode(bytes)
}

pub fn hex_decode(text: &str) -> Result<Vec<u8>, TokenizerError> {
    hex::decode(text).map_err(|e| match e {
        hex::FromHexError::InvalidHexCharacter { c, index } => {
            TokenizerError::BadHexDigit { digit: c, index }
        }
        hex::FromHexError::OddLength | hex::FromHexError::InvalidStringLength => {
            TokenizerError::OddLength
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn encode_small() {
        let seq = encode(&[0x41, 0x42], 6);
        assert_eq!(seq.ids, vec![256, 65, 66, 257, 257, 257]);
        assert_eq!(seq.mask, vec![1, 1, 1, 0, 0, 0]);
        assert_eq!(seq.true_length, 3);
    }

    #[test]
    fn full_mtu_payload_truncates_to_1459() {
        let payload: Vec<u8> = (0..1460).map(|i| (i % 251) as u8).collect();
        let seq = encode(&payload, 1460);
        assert_eq!(seq.true_length, 1460);
        assert_eq!(seq.capacity(), 1460);
        assert_eq!(decode(&seq).unwrap(), payload[..1459].to_vec());
    }

    #[test]
    fn decode_simple_and_cls_only() {
        assert_eq!(decode(&encode(b"ABC", 8)).unwrap(), b"ABC");
        assert_eq!(decode(&encode(b"", 4)).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn decode_rejects_malformed() {
        let mut seq = encode(b"AB", 5);
        seq.ids[0] = 7;
        assert!(matches!(decode(&seq), Err(TokenizerError::MalformedSequence(_))));
        let mut seq = encode(b"AB", 5);
        seq.ids[4] = 3;
        assert!(decode(&seq).is_err());
        let mut seq = encode(b"AB", 5);
        seq.mask[1] = 0;
        assert!(decode(&seq).is_err());
    }

    #[test]
    fn hex_examples() {
        assert_eq!(hex_decode("4142").unwrap(), vec![0x41, 0x42]);
        assert_eq!(hex_decode("").unwrap(), Vec::<u8>::new());
        assert!(matches!(hex_decode("zz"), Err(TokenizerError::BadHexDigit { digit: 'z', index: 0 })));
        assert_eq!(hex_decode("414"), Err(TokenizerError::OddLength));
        assert_eq!(hex_encode(&[0xde, 0xad, 0x01]), "dead01");
    }

    #[test]
    fn batch_pads_to_longest() {
        let batch = encode_batch(&[b"ab".to_vec(), b"abcde".to_vec()], 128);
        assert!(batch.iter().all(|s| s.capacity() == 6));
        let capped = encode_batch(&[vec![1u8; 500]], 128);
        assert_eq!(capped[0].capacity(), 128);
    }

    proptest! {
        #[test]
        fn roundtrip(payload in proptest::collection::vec(any::<u8>(), 0..300)) {
            let seq = encode(&payload, 301);
            prop_assert!(seq.ids.iter().all(|&id| id <= PAD_ID));
            prop_assert_eq!(decode(&seq).unwrap(), payload);
        }

        #[test]
        fn truncation_is_prefix(payload in proptest::collection::vec(any::<u8>(), 1..200), cap in 2usize..64) {
            let short = encode(&payload, cap);
            let long = encode(&payload, 256);
            prop_assert_eq!(&short.ids[..short.true_length], &long.ids[..short.true_length]);
        }

        #[test]
        fn hex_roundtrip(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            prop_assert_eq!(hex_decode(&hex_encode(&bytes)).unwrap(), bytes);
        }
    }
}
