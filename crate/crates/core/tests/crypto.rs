//! Known-answer vectors: the single-block ones are the FIPS-197 appendix
//! examples; the CBC and Fernet ones were produced with OpenSSL through
//! Python's `cryptography` package (`Fernet._encrypt_from_parts` for fixed
//! timestamp and IV).

use paydpi::crypto::aes::{cbc_encrypt, Aes};
use paydpi::crypto::{
    aes256_cbc_decrypt, aes256_cbc_encrypt, encrypt_dataset, fernet, fernet_decrypt, fernet_encrypt, CipherSpec,
    CryptoError, IvPolicy,
};
use paydpi::dataset::{class_counts, dedup, LabeledPayload};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn h(s: &str) -> Vec<u8> {
    hex::decode(s).unwrap()
}

#[test]
fn fips197_single_blocks() {
    let pt: [u8; 16] = h("00112233445566778899aabbccddeeff").try_into().unwrap();
    let k128: Vec<u8> = (0..16).collect();
    let k256: Vec<u8> = (0..32).collect();
    for (key, ct) in [(k128, "69c4e0d86a7b0430d8cdb78070b4c55a"), (k256, "8ea2b7ca516745bfeafc49904b496089")] {
        let aes = Aes::new(&key).unwrap();
        let mut block = pt;
        aes.encrypt_block(&mut block);
        assert_eq!(hex::encode(block), ct);
        aes.decrypt_block(&mut block);
        assert_eq!(block, pt);
    }
}

#[test]
fn aes256_cbc_chaining_vector() {
    let key = h("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9814a10914dff4");
    let iv: Vec<u8> = (0..16).collect();
    let pt = h(concat!(
        "6bc1bee22e409f96e93d7e117393172aae2d8a571e03ac9c9eb76fac45af8e51",
        "30c81c46a35ce411e5fbc1191a0a52eff69f2445df4f9b17ad2b417be66c3710"
    ));
    let expected = concat!(
        "93d43ba74d92f01a72bf9339780578413445deefd97813ce275768b03c081440",
        "a2bd33a5f084a01edeb829c3cd69a5a1faaf36a4b11fe49c119559c507265b67"
    );
    // block-aligned input: the first 64 bytes are the unpadded chain
    let ct = cbc_encrypt(&Aes::new(&key).unwrap(), &iv, &pt).unwrap();
    assert_eq!(hex::encode(&ct[..64]), expected);
    assert_eq!(ct.len(), 80);
}

#[test]
fn aes256_cbc_pkcs7_vectors() {
    let key: Vec<u8> = (0..32).collect();
    let iv = [0u8; 16];
    let cases = [
        ("", "9f3b7504926f8bd36e3118e903a4cd4a"),
        ("7061796c6f6164206279746573", "75466f6a748b5f2ae80e00f7c0b2bf77"),
        (
            "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f2021222324252627",
            "5a6e045708fb7196f02e553d02c3a692c77147ebd5121de8d0fae7762423b6bf01108ba84d0592d9e4c90ac962d87790",
        ),
    ];
    for (pt, ct) in cases {
        assert_eq!(hex::encode(aes256_cbc_encrypt(&h(pt), &key, &iv).unwrap()), ct);
        assert_eq!(aes256_cbc_decrypt(&h(ct), &key, &iv).unwrap(), h(pt));
    }
}

#[test]
fn fernet_vectors() {
    let key: Vec<u8> = (0..32).collect();
    let iv: Vec<u8> = (100..116).collect();
    let cases = [
        ("68656c6c6f206665726e6574", 1_700_000_000u64, "80000000006553f1006465666768696a6b6c6d6e6f707172730036cb7919e2239ac937af1f0b7575e8a4a0d6880a50f7bae0e3cce4b4c4ffb771529bf46dffbff5be4bc25c81de26db"),
        ("", 0, "8000000000000000006465666768696a6b6c6d6e6f707172730a210867ed578d993768d1e2775bb1062b005cf4bc7ea0430694fd57917f6901cd0b4410c22909dc64fb3557f5e3aa3f"),
        ("000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f20", 499_162_800, "80000000001dc09eb06465666768696a6b6c6d6e6f70717273d02c13873be10313016f347c619cdf5ffc4619813ba4cf9faecc8ce72b36958c625d921f2cc7507b939494e8ffa4f1d64f7de36b5f6cfa69a03cfbdf9ee160e243b1e175d5195c3ea7bfa2f19216e69c"),
    ];
    for (pt, ts, token) in cases {
        assert_eq!(hex::encode(fernet_encrypt(&h(pt), &key, ts, &iv).unwrap()), token);
        assert_eq!(fernet_decrypt(&h(token), &key).unwrap(), (ts, h(pt)));
    }
}

#[test]
fn cbc_round_trip_every_length_to_4096() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let key: [u8; 32] = rng.gen();
    let iv: [u8; 16] = rng.gen();
    let data: Vec<u8> = (0..4096).map(|_| rng.gen()).collect();
    for len in 0..=4096 {
        let ct = aes256_cbc_encrypt(&data[..len], &key, &iv).unwrap();
        assert_eq!(ct.len(), 16 * ((len + 1).div_ceil(16)));
        assert_eq!(aes256_cbc_decrypt(&ct, &key, &iv).unwrap(), &data[..len], "length {len}");
    }
}

proptest! {
    #[test]
    fn fernet_round_trip(msg in prop::collection::vec(any::<u8>(), 0..600), ts in any::<u64>(), key in prop::array::uniform32(any::<u8>()), iv in prop::array::uniform16(any::<u8>())) {
        let token = fernet_encrypt(&msg, &key, ts, &iv).unwrap();
        prop_assert_eq!(token.len(), fernet::token_len(msg.len()));
        prop_assert_eq!(fernet_decrypt(&token, &key).unwrap(), (ts, msg));
    }

    #[test]
    fn aes_round_trip(msg in prop::collection::vec(any::<u8>(), 0..4096), key in prop::array::uniform32(any::<u8>()), iv in prop::array::uniform16(any::<u8>())) {
        let ct = aes256_cbc_encrypt(&msg, &key, &iv).unwrap();
        prop_assert_eq!(aes256_cbc_decrypt(&ct, &key, &iv).unwrap(), msg);
    }
}

#[test]
fn distinct_ivs_give_distinct_ciphertexts() {
    let key = [9u8; 32];
    let a = aes256_cbc_encrypt(b"same plaintext", &key, &[0; 16]).unwrap();
    let b = aes256_cbc_encrypt(b"same plaintext", &key, &[1; 16]).unwrap();
    assert_ne!(a[..16], b[..16]);
}

#[test]
fn wrong_key_fails_verification() {
    let token = fernet_encrypt(b"x", &[1; 32], 0, &[0; 16]).unwrap();
    let mut other = [1u8; 32];
    other[0] = 2;
    assert_eq!(fernet_decrypt(&token, &other), Err(CryptoError::InvalidToken("HMAC verification failed")));
}

fn thousand() -> Vec<LabeledPayload> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    (0..1000)
        .map(|i| {
            let len = rng.gen_range(0..90);
            LabeledPayload::new((0..len).map(|_| rng.gen()).collect(), (i % 3 == 0) as u32, None)
        })
        .collect()
}

#[test]
fn dataset_encryption_preserves_count_and_labels() {
    let data = thousand();
    for spec in [CipherSpec::aes256(1), CipherSpec::fernet(1, paydpi::crypto::TimestampPolicy::Fixed { timestamp: 7 })] {
        let enc = encrypt_dataset(&data, &spec).unwrap();
        assert_eq!(enc.records.len(), 1000);
        assert_eq!(class_counts(&enc.records), class_counts(&data));
        for (e, d) in enc.records.iter().zip(&data) {
            assert_eq!(e.label, d.label);
        }
        assert!(!enc.manifest_json().contains(&hex::encode(&spec.key)));
    }
    let enc = encrypt_dataset(&data, &CipherSpec::aes256(1)).unwrap();
    assert!(enc.records.iter().all(|r| r.payload.len() % 16 == 0));
}

#[test]
fn parallel_matches_serial() {
    let data = thousand();
    let spec = CipherSpec::aes256(8);
    let parallel = encrypt_dataset(&data, &spec).unwrap();
    for (i, (p, d)) in parallel.records.iter().zip(&data).enumerate() {
        assert_eq!(p.payload, spec.encrypt_one(&d.payload, d.label, i as u64, 0).unwrap());
    }
}

#[test]
fn fresh_ivs_defeat_dedup() {
    let dupes: Vec<LabeledPayload> = (0..20).map(|_| LabeledPayload::new(b"identical".to_vec(), 1, None)).collect();
    assert_eq!(dedup(dupes.clone()).len(), 1);
    let fresh = encrypt_dataset(&dupes, &CipherSpec::aes256(3)).unwrap();
    assert_eq!(dedup(fresh.records).len(), 20);
    let fixed = CipherSpec { iv_policy: IvPolicy::Fixed { iv: vec![0; 16] }, ..CipherSpec::aes256(3) };
    assert_eq!(dedup(encrypt_dataset(&dupes, &fixed).unwrap().records).len(), 1);
}
