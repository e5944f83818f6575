//! Fernet tokens as raw bytes:
//! `0x80 | u64 BE timestamp | IV | AES-128-CBC ciphertext | HMAC-SHA-256`.
//! The 32-byte key is signing half first, encryption half second.

use base64::engine::general_purpose::URL_SAFE;
use base64::Engine;
use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

use super::aes::{cbc_decrypt, cbc_encrypt, Aes, BLOCK};
use super::CryptoError;

pub const VERSION: u8 = 0x80;
const HEADER: usize = 1 + 8 + BLOCK;
const TAG: usize = 32;

type HmacSha256 = Hmac<Sha256>;

fn halves(key: &[u8]) -> Result<(&[u8], &[u8]), CryptoError> {
    if key.len() != 32 {
        return Err(CryptoError::BadKeyLength { expected: 32, found: key.len() });
    }
    Ok(key.split_at(16))
}

fn mac(signing: &[u8]) -> HmacSha256 {
    <HmacSha256 as KeyInit>::new_from_slice(signing).expect("HMAC takes any key length")
}

/// Token length for a plaintext of `len` bytes.
pub fn token_len(len: usize) -> usize {
    HEADER + BLOCK * (len / BLOCK + 1) + TAG
}

pub fn encrypt(plaintext: &[u8], key: &[u8], timestamp: u64, iv: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let (signing, encryption) = halves(key)?;
    if iv.len() != BLOCK {
        return Err(CryptoError::BadIvLength(iv.len()));
    }
    let body = cbc_encrypt(&Aes::new(encryption)?, iv, plaintext)?;
    let mut token = Vec::with_capacity(HEADER + body.len() + TAG);
    token.push(VERSION);
    token.extend_from_slice(&timestamp.to_be_bytes());
    token.extend_from_slice(iv);
    token.extend_from_slice(&body);
    let mut m = mac(signing);
    m.update(&token);
    token.extend_from_slice(&m.finalize().into_bytes());
    Ok(token)
}

/// Verifies the tag, then decrypts. Returns `(timestamp, plaintext)`.
pub fn decrypt(token: &[u8], key: &[u8]) -> Result<(u64, Vec<u8>), CryptoError> {
    let (signing, encryption) = halves(key)?;
    if token.len() < HEADER + BLOCK + TAG || (token.len() - HEADER - TAG) % BLOCK != 0 {
        return Err(CryptoError::InvalidToken("bad token length"));
    }
    if token[0] != VERSION {
        return Err(CryptoError::InvalidToken("unknown version byte"));
    }
    let (signed, tag) = token.split_at(token.len() - TAG);
    let mut m = mac(signing);
    m.update(signed);
    m.verify_slice(tag).map_err(|_| CryptoError::InvalidToken("HMAC verification failed"))?;
    let timestamp = u64::from_be_bytes(token[1..9].try_into().unwrap());
    let plaintext = cbc_decrypt(&Aes::new(encryption)?, &token[9..HEADER], &signed[HEADER..])?;
    Ok((timestamp, plaintext))
}

/// URL-safe base64 text form of a raw token.
pub fn to_text(token: &[u8]) -> String {
    URL_SAFE.encode(token)
}

pub fn from_text(text: &str) -> Result<Vec<u8>, CryptoError> {
    URL_SAFE.decode(text.trim()).map_err(|_| CryptoError::InvalidToken("not URL-safe base64"))
}
