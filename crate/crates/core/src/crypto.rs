//! Record encryption, result sealing and quote signatures.
//!
//! User data is AES-256-CBC with PKCS#7 padding under a per-user key. The
//! aggregate is sealed with a hybrid scheme: a fresh AES-256 key encrypts the
//! payload and is wrapped for the recipient with RSA-OAEP (SHA-256). Quote
//! signatures are Ed25519.
//!
//! # Sealed result layout
//!
//! The OAEP plaintext is 64 bytes: `payload_key (32) || SHA-256(iv || payload_ciphertext) (32)`.
//! The digest lives inside the wrapped blob, so flipping any bit of the iv or
//! the payload ciphertext makes [`open_result`] fail, and flipping a bit of the
//! wrapped key breaks OAEP decoding.

use std::fmt;

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use ed25519_dalek::Signer;
use rand::{CryptoRng, RngCore};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;

pub const BLOCK_LEN: usize = 16;
pub const KEY_LEN: usize = 32;
pub const IV_LEN: usize = 16;
pub const SIGNATURE_LEN: usize = 64;
pub const VERIFY_KEY_LEN: usize = 32;

/// Modulus size of recipient keys.
pub const RECIPIENT_KEY_BITS: usize = 2048;

/// Largest payload [`seal_result`] accepts.
pub const MAX_SEAL_PAYLOAD: usize = 64 * 1024 * 1024;

const WRAPPED_PLAINTEXT_LEN: usize = KEY_LEN + 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Wrong key and corrupted ciphertext are deliberately not distinguished.
    #[error("decryption failed")]
    DecryptionFailure,
    #[error("sealed result could not be opened")]
    OpenFailure,
    #[error("payload of {len} bytes exceeds limit of {max}")]
    SizeError { len: usize, max: usize },
    #[error("key encoding: {0}")]
    KeyEncoding(String),
}

/// Per-user AES-256 key.
#[derive(Clone, PartialEq, Eq)]
pub struct DataKey([u8; KEY_LEN]);

impl DataKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; KEY_LEN] = bytes.try_into().map_err(|_| {
            CryptoError::InvalidArgument(format!("key must be {KEY_LEN} bytes, got {}", bytes.len()))
        })?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for DataKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DataKey(<redacted>)")
    }
}

/// Identifier a user or taxi publishes alongside its ciphertexts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UserId(String);

impl UserId {
    pub fn new(id: impl Into<String>) -> Result<Self, CryptoError> {
        let id = id.into();
        if id.is_empty() {
            return Err(CryptoError::InvalidArgument("user id is empty".into()));
        }
        if id.chars().any(char::is_control) {
            return Err(CryptoError::InvalidArgument("user id contains control characters".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// One encrypted user datum. The middleware only ever holds these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncryptedRecord {
    user_id: UserId,
    iv: [u8; IV_LEN],
    ciphertext: Vec<u8>,
}

impl EncryptedRecord {
    pub fn new(user_id: UserId, iv: [u8; IV_LEN], ciphertext: Vec<u8>) -> Result<Self, CryptoError> {
        if ciphertext.is_empty() || !ciphertext.len().is_multiple_of(BLOCK_LEN) {
            return Err(CryptoError::InvalidArgument(format!(
                "ciphertext length {} is not a positive multiple of {BLOCK_LEN}",
                ciphertext.len()
            )));
        }
        Ok(Self { user_id, iv, ciphertext })
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn iv(&self) -> &[u8; IV_LEN] {
        &self.iv
    }

    pub fn ciphertext(&self) -> &[u8] {
        &self.ciphertext
    }

    /// Bytes that travel for this record: iv plus ciphertext.
    pub fn wire_len(&self) -> usize {
        IV_LEN + self.ciphertext.len()
    }
}

/// Ciphertext length for a plaintext of `plaintext_len` bytes.
pub fn ciphertext_len(plaintext_len: usize) -> usize {
    BLOCK_LEN * (plaintext_len / BLOCK_LEN + 1)
}

pub fn random_iv<R: RngCore + CryptoRng>(rng: &mut R) -> [u8; IV_LEN] {
    let mut iv = [0u8; IV_LEN];
    rng.fill_bytes(&mut iv);
    iv
}

fn cbc_encrypt(key: &[u8; KEY_LEN], iv: &[u8; IV_LEN], plaintext: &[u8]) -> Vec<u8> {
    Aes256CbcEnc::new(key.into(), iv.into()).encrypt_padded_vec_mut::<Pkcs7>(plaintext)
}

fn cbc_decrypt(key: &[u8; KEY_LEN], iv: &[u8; IV_LEN], ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
    Aes256CbcDec::new(key.into(), iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(ciphertext)
        .map_err(|_| CryptoError::DecryptionFailure)
}

pub fn encrypt_record(
    key: &DataKey,
    user_id: UserId,
    plaintext: &[u8],
    iv: &[u8],
) -> Result<EncryptedRecord, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::InvalidArgument("plaintext is empty".into()));
    }
    let iv: [u8; IV_LEN] = iv
        .try_into()
        .map_err(|_| CryptoError::InvalidArgument(format!("iv must be {IV_LEN} bytes, got {}", iv.len())))?;
    let ciphertext = cbc_encrypt(&key.0, &iv, plaintext);
    Ok(EncryptedRecord { user_id, iv, ciphertext })
}

pub fn decrypt_record(key: &DataKey, rec: &EncryptedRecord) -> Result<Vec<u8>, CryptoError> {
    cbc_decrypt(&key.0, &rec.iv, &rec.ciphertext)
}

/// Public half of the recipient key pair. Its SPKI DER bytes are what the
/// enclave identity commits to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecipientPublicKey(RsaPublicKey);

impl RecipientPublicKey {
    pub fn to_der(&self) -> Vec<u8> {
        self.0
            .to_public_key_der()
            .expect("RSA public key always encodes")
            .into_vec()
    }

    pub fn from_der(der: &[u8]) -> Result<Self, CryptoError> {
        RsaPublicKey::from_public_key_der(der)
            .map(Self)
            .map_err(|e| CryptoError::KeyEncoding(e.to_string()))
    }

    pub fn to_pem(&self) -> String {
        self.0
            .to_public_key_pem(LineEnding::LF)
            .expect("RSA public key always encodes")
    }

    pub fn from_pem(pem: &str) -> Result<Self, CryptoError> {
        RsaPublicKey::from_public_key_pem(pem)
            .map(Self)
            .map_err(|e| CryptoError::KeyEncoding(e.to_string()))
    }

    /// SHA-256 of the SPKI DER encoding.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_der()).into()
    }
}

#[derive(Clone)]
pub struct RecipientPrivateKey(RsaPrivateKey);

impl RecipientPrivateKey {
    pub fn to_pkcs8_pem(&self) -> String {
        self.0
            .to_pkcs8_pem(LineEnding::LF)
            .expect("RSA private key always encodes")
            .to_string()
    }

    pub fn from_pkcs8_pem(pem: &str) -> Result<Self, CryptoError> {
        RsaPrivateKey::from_pkcs8_pem(pem)
            .map(Self)
            .map_err(|e| CryptoError::KeyEncoding(e.to_string()))
    }

    pub fn public_key(&self) -> RecipientPublicKey {
        RecipientPublicKey(self.0.to_public_key())
    }
}

impl fmt::Debug for RecipientPrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("RecipientPrivateKey(<redacted>)")
    }
}

#[derive(Debug, Clone)]
pub struct RecipientKeyPair {
    pub public_key: RecipientPublicKey,
    pub private_key: RecipientPrivateKey,
}

impl RecipientKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Result<Self, CryptoError> {
        let private = RsaPrivateKey::new(rng, RECIPIENT_KEY_BITS)
            .map_err(|e| CryptoError::KeyEncoding(e.to_string()))?;
        let public_key = RecipientPublicKey(private.to_public_key());
        Ok(Self { public_key, private_key: RecipientPrivateKey(private) })
    }
}

/// Aggregate encrypted for the recipient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedResult {
    pub wrapped_key: Vec<u8>,
    pub iv: [u8; IV_LEN],
    pub payload_ciphertext: Vec<u8>,
}

fn payload_digest(iv: &[u8; IV_LEN], ciphertext: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(iv);
    h.update(ciphertext);
    h.finalize().into()
}

pub fn seal_result<R: RngCore + CryptoRng>(
    rng: &mut R,
    recipient: &RecipientPublicKey,
    payload: &[u8],
) -> Result<SealedResult, CryptoError> {
    if payload.is_empty() {
        return Err(CryptoError::InvalidArgument("payload is empty".into()));
    }
    if payload.len() > MAX_SEAL_PAYLOAD {
        return Err(CryptoError::SizeError { len: payload.len(), max: MAX_SEAL_PAYLOAD });
    }
    let mut payload_key = [0u8; KEY_LEN];
    rng.fill_bytes(&mut payload_key);
    let iv = random_iv(rng);
    let payload_ciphertext = cbc_encrypt(&payload_key, &iv, payload);

    let mut wrapped_plain = [0u8; WRAPPED_PLAINTEXT_LEN];
    wrapped_plain[..KEY_LEN].copy_from_slice(&payload_key);
    wrapped_plain[KEY_LEN..].copy_from_slice(&payload_digest(&iv, &payload_ciphertext));
    let wrapped_key = recipient
        .0
        .encrypt(rng, Oaep::new::<Sha256>(), &wrapped_plain)
        .map_err(|e| CryptoError::KeyEncoding(e.to_string()))?;
    Ok(SealedResult { wrapped_key, iv, payload_ciphertext })
}

pub fn open_result(recipient: &RecipientPrivateKey, sealed: &SealedResult) -> Result<Vec<u8>, CryptoError> {
    let wrapped = recipient
        .0
        .decrypt(Oaep::new::<Sha256>(), &sealed.wrapped_key)
        .map_err(|_| CryptoError::OpenFailure)?;
    if wrapped.len() != WRAPPED_PLAINTEXT_LEN {
        return Err(CryptoError::OpenFailure);
    }
    let (key, digest) = wrapped.split_at(KEY_LEN);
    if digest != payload_digest(&sealed.iv, &sealed.payload_ciphertext) {
        return Err(CryptoError::OpenFailure);
    }
    let key: [u8; KEY_LEN] = key.try_into().expect("split at KEY_LEN");
    cbc_decrypt(&key, &sealed.iv, &sealed.payload_ciphertext).map_err(|_| CryptoError::OpenFailure)
}

/// Ed25519 signing key, used both for the simulated manufacturer root and
/// the per-enclave TEE key.
pub struct SigningKeyPair(ed25519_dalek::SigningKey);

impl SigningKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self(ed25519_dalek::SigningKey::generate(rng))
    }

    pub fn from_seed(seed: &[u8; 32]) -> Self {
        Self(ed25519_dalek::SigningKey::from_bytes(seed))
    }

    pub fn verify_key(&self) -> VerifyKey {
        VerifyKey(self.0.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.0.sign(message).to_bytes()
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("SigningKeyPair").field(&self.verify_key()).finish()
    }
}

/// Raw 32-byte Ed25519 public key. Validity is checked lazily by [`verify`].
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct VerifyKey(pub [u8; VERIFY_KEY_LEN]);

impl fmt::Debug for VerifyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerifyKey(")?;
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

/// Strict Ed25519 verification. Malformed keys or signatures yield `false`.
pub fn verify(key: &VerifyKey, message: &[u8], signature: &[u8]) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&key.0) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
        return false;
    };
    vk.verify_strict(message, &sig).is_ok()
}
