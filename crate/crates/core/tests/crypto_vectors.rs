//! Known-answer vectors computed with OpenSSL through Python `cryptography`
//! and taken from RFC 8032.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use teeagg::crypto::{
    ciphertext_len, decrypt_record, encrypt_record, random_iv, verify, DataKey, SigningKeyPair, UserId, VerifyKey,
};

fn key(hex_key: &str) -> DataKey {
    DataKey::from_slice(&hex::decode(hex_key).unwrap()).unwrap()
}

fn uid() -> UserId {
    UserId::new("kat").unwrap()
}

const NIST_KEY: &str = "603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4";
const NIST_IV: &str = "000102030405060708090a0b0c0d0e0f";

#[test]
fn aes256_cbc_nist_plaintext_with_padding() {
    let pt = hex::decode(concat!(
        "6bc1bee22e409f96e93d7e117393172a",
        "ae2d8a571e03ac9c9eb76fac45af8e51",
        "30c81c46a35ce411e5fbc1191a0a52ef",
        "f69f2445df4f9b17ad2b417be66c3710"
    ))
    .unwrap();
    let rec = encrypt_record(&key(NIST_KEY), uid(), &pt, &hex::decode(NIST_IV).unwrap()).unwrap();
    // the first four blocks are the NIST SP 800-38A CBC-AES256 vector; the
    // fifth is the full PKCS#7 padding block
    assert_eq!(
        hex::encode(rec.ciphertext()),
        concat!(
            "f58c4c04d6e5f1ba779eabfb5f7bfbd6",
            "9cfc4e967edb808d679f777bc6702c7d",
            "39f23369a9d9bacfa530e26304231461",
            "b2eb05e2c39be9fcda6c19078c6a9d1b",
            "3f461796d6b0d6b2e0c2a72b4d80e644"
        )
    );
    assert_eq!(decrypt_record(&key(NIST_KEY), &rec).unwrap(), pt);
}

#[test]
fn aes256_cbc_short_payloads() {
    let rec = encrypt_record(&key(NIST_KEY), uid(), b"7", &hex::decode(NIST_IV).unwrap()).unwrap();
    assert_eq!(hex::encode(rec.ciphertext()), "62ab7b2fc987b72ce5754e012ef7268d");

    let rec = encrypt_record(&DataKey::from_bytes([0x11; 32]), uid(), b"hello, enclave", &[0x22; 16]).unwrap();
    assert_eq!(hex::encode(rec.ciphertext()), "4a5d24bf312e95d884200d166390c188");
}

#[test]
fn ciphertext_length_formula() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let k = DataKey::generate(&mut rng);
    for len in 1..=128usize {
        let expected = 16 * (len + 1).div_ceil(16);
        assert_eq!(ciphertext_len(len), expected);
        let rec = encrypt_record(&k, uid(), &vec![0xa5; len], &random_iv(&mut rng)).unwrap();
        assert_eq!(rec.ciphertext().len(), expected, "len {len}");
    }
    let one = encrypt_record(&k, uid(), b"9", &random_iv(&mut rng)).unwrap();
    assert_eq!(one.wire_len(), 32);
}

#[test]
fn ed25519_rfc8032_test_1() {
    let seed: [u8; 32] = hex::decode("9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60")
        .unwrap()
        .try_into()
        .unwrap();
    let kp = SigningKeyPair::from_seed(&seed);
    assert_eq!(hex::encode(kp.verify_key().0), "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a");
    let sig = kp.sign(b"");
    assert_eq!(
        hex::encode(sig),
        "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b"
    );
    assert!(verify(&kp.verify_key(), b"", &sig));

    let sig = kp.sign(b"teeagg quote fixture");
    assert_eq!(
        hex::encode(sig),
        "6073dcd4ed13fa65567579b2f0c9c653d71d1a25cc2f6ecbbe019287312ff007ae1f3cb5a8495f7ef8c377815f8fdaf5ee40e07678d962d6879dbd20977a7e03"
    );
}

#[test]
fn ed25519_rejects_wrong_key_and_message() {
    let kp = SigningKeyPair::from_seed(&[3; 32]);
    let sig = kp.sign(b"m");
    assert!(!verify(&kp.verify_key(), b"n", &sig));
    assert!(!verify(&VerifyKey([0; 32]), b"m", &sig));
    assert!(!verify(&kp.verify_key(), b"m", &sig[..63]));
}
