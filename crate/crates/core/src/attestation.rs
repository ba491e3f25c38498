//! Simulated remote attestation.
//!
//! A simulated manufacturer root certifies a per-enclave TEE key. The TEE key
//! signs quotes binding the enclave measurement to the live channel and to a
//! verifier-chosen nonce.
//!
//! # Byte formats
//!
//! Measurement input (SHA-256 over):
//!
//! ```text
//! "teeagg-enclave-identity-v1"
//! || lp(u32_be(protocol_version)) || lp(spec_digest) || lp(recipient_pub_digest) || lp(model_digest)
//! ```
//!
//! where `lp(x) = u32_be(len(x)) || x`.
//!
//! Root certificate: Ed25519 by the manufacturer over `"teeagg-tee-cert-v1" || tee_pub`.
//!
//! Quote signature: Ed25519 by the TEE key over
//! `"teeagg-quote-v1" || measurement || channel_binding || nonce || tee_pub`.
//!
//! Serialized quote: `"TAQ1" || lp(measurement) || lp(channel_binding) || lp(nonce) || lp(tee_pub) || lp(signature) || lp(root_cert)`.

use std::fmt;

use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};

use crate::crypto::{self, RecipientPublicKey, SigningKeyPair, VerifyKey, SIGNATURE_LEN, VERIFY_KEY_LEN};

pub const PROTOCOL_VERSION: u32 = 1;
pub const NONCE_LEN: usize = 16;
pub const BINDING_LEN: usize = 32;

const IDENTITY_TAG: &[u8] = b"teeagg-enclave-identity-v1";
const CERT_TAG: &[u8] = b"teeagg-tee-cert-v1";
const QUOTE_TAG: &[u8] = b"teeagg-quote-v1";
const QUOTE_MAGIC: &[u8; 4] = b"TAQ1";

/// Seed of the well-known simulated manufacturer, shared by every tool that
/// does not configure its own.
pub const DEFAULT_MANUFACTURER_SEED: [u8; 32] = *b"teeagg simulated manufacturer v1";

pub type Nonce = [u8; NONCE_LEN];
pub type ChannelBinding = [u8; BINDING_LEN];

fn push_lp(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bytes);
}

/// What the enclave does and who can read its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnclaveIdentity {
    pub protocol_version: u32,
    pub aggregation_spec_digest: [u8; 32],
    pub recipient_pub_digest: [u8; 32],
    /// All-zero when the aggregation embeds no model.
    pub model_digest: [u8; 32],
}

impl EnclaveIdentity {
    pub fn new(spec_canonical: &str, recipient: &RecipientPublicKey, model_canonical: Option<&str>) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            aggregation_spec_digest: Sha256::digest(spec_canonical.as_bytes()).into(),
            recipient_pub_digest: recipient.digest(),
            model_digest: model_canonical.map_or([0; 32], |m| Sha256::digest(m.as_bytes()).into()),
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(IDENTITY_TAG.len() + 4 * 4 + 4 + 3 * 32);
        out.extend_from_slice(IDENTITY_TAG);
        push_lp(&mut out, &self.protocol_version.to_be_bytes());
        push_lp(&mut out, &self.aggregation_spec_digest);
        push_lp(&mut out, &self.recipient_pub_digest);
        push_lp(&mut out, &self.model_digest);
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Measurement(pub [u8; 32]);

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({self})")
    }
}

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

pub fn measure(identity: &EnclaveIdentity) -> Measurement {
    Measurement(Sha256::digest(identity.canonical_bytes()).into())
}

/// Simulated TEE manufacturer holding the attestation root key.
#[derive(Debug)]
pub struct Manufacturer {
    root: SigningKeyPair,
}

impl Manufacturer {
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        Self { root: SigningKeyPair::from_seed(seed) }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self { root: SigningKeyPair::generate(rng) }
    }

    pub fn root_key(&self) -> VerifyKey {
        self.root.verify_key()
    }

    fn certify(&self, tee_pub: &VerifyKey) -> [u8; SIGNATURE_LEN] {
        self.root.sign(&cert_message(tee_pub))
    }
}

impl Default for Manufacturer {
    fn default() -> Self {
        Self::from_seed(&DEFAULT_MANUFACTURER_SEED)
    }
}

fn cert_message(tee_pub: &VerifyKey) -> Vec<u8> {
    let mut m = CERT_TAG.to_vec();
    m.extend_from_slice(&tee_pub.0);
    m
}

fn quote_message(measurement: &Measurement, binding: &ChannelBinding, nonce: &Nonce, tee_pub: &VerifyKey) -> Vec<u8> {
    let mut m = Vec::with_capacity(QUOTE_TAG.len() + 32 + BINDING_LEN + NONCE_LEN + VERIFY_KEY_LEN);
    m.extend_from_slice(QUOTE_TAG);
    m.extend_from_slice(&measurement.0);
    m.extend_from_slice(binding);
    m.extend_from_slice(nonce);
    m.extend_from_slice(&tee_pub.0);
    m
}

/// The TEE's quoting key together with its manufacturer certificate.
#[derive(Debug)]
pub struct TeeSigner {
    key: SigningKeyPair,
    root_cert: [u8; SIGNATURE_LEN],
}

impl TeeSigner {
    pub fn provision<R: RngCore + CryptoRng>(rng: &mut R, manufacturer: &Manufacturer) -> Self {
        let key = SigningKeyPair::generate(rng);
        let root_cert = manufacturer.certify(&key.verify_key());
        Self { key, root_cert }
    }

    /// A key that was never certified; its quotes must fail the chain check.
    pub fn self_certified<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let rogue = Manufacturer::generate(rng);
        Self::provision(rng, &rogue)
    }

    pub fn verify_key(&self) -> VerifyKey {
        self.key.verify_key()
    }

    pub fn issue_quote(&self, measurement: Measurement, channel_binding: ChannelBinding, nonce: Nonce) -> AttestationQuote {
        let tee_pub = self.key.verify_key();
        let signature = self.key.sign(&quote_message(&measurement, &channel_binding, &nonce, &tee_pub));
        AttestationQuote { measurement, channel_binding, nonce, tee_pub, signature, root_cert: self.root_cert }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationQuote {
    pub measurement: Measurement,
    pub channel_binding: ChannelBinding,
    pub nonce: Nonce,
    pub tee_pub: VerifyKey,
    pub signature: [u8; SIGNATURE_LEN],
    pub root_cert: [u8; SIGNATURE_LEN],
}

impl AttestationQuote {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = QUOTE_MAGIC.to_vec();
        push_lp(&mut out, &self.measurement.0);
        push_lp(&mut out, &self.channel_binding);
        push_lp(&mut out, &self.nonce);
        push_lp(&mut out, &self.tee_pub.0);
        push_lp(&mut out, &self.signature);
        push_lp(&mut out, &self.root_cert);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RejectReason> {
        let rest = bytes.strip_prefix(QUOTE_MAGIC.as_slice()).ok_or(RejectReason::Malformed)?;
        let mut reader = LpReader(rest);
        let measurement = Measurement(reader.fixed()?);
        let channel_binding = reader.fixed()?;
        let nonce = reader.fixed()?;
        let tee_pub = VerifyKey(reader.fixed()?);
        let signature = reader.fixed()?;
        let root_cert = reader.fixed()?;
        if !reader.0.is_empty() {
            return Err(RejectReason::Malformed);
        }
        Ok(Self { measurement, channel_binding, nonce, tee_pub, signature, root_cert })
    }
}

struct LpReader<'a>(&'a [u8]);

impl LpReader<'_> {
    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], RejectReason> {
        if self.0.len() < 4 {
            return Err(RejectReason::Malformed);
        }
        let (len, rest) = self.0.split_at(4);
        let len = u32::from_be_bytes(len.try_into().expect("4 bytes")) as usize;
        if len != N || rest.len() < N {
            return Err(RejectReason::Malformed);
        }
        let (field, rest) = rest.split_at(N);
        self.0 = rest;
        Ok(field.try_into().expect("length checked"))
    }
}

/// The first check a quote failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, thiserror::Error)]
pub enum RejectReason {
    #[error("malformed quote")]
    Malformed,
    #[error("TEE key is not certified by the manufacturer")]
    ChainInvalid,
    #[error("quote signature invalid")]
    SignatureInvalid,
    #[error("measurement mismatch")]
    MeasurementMismatch,
    #[error("channel binding mismatch")]
    BindingMismatch,
    #[error("nonce mismatch")]
    NonceMismatch,
}

pub fn verify_quote(
    manufacturer_root: &VerifyKey,
    quote: &AttestationQuote,
    expected_measurement: &Measurement,
    expected_binding: &ChannelBinding,
    expected_nonce: &Nonce,
) -> Result<(), RejectReason> {
    if !crypto::verify(manufacturer_root, &cert_message(&quote.tee_pub), &quote.root_cert) {
        return Err(RejectReason::ChainInvalid);
    }
    let message = quote_message(&quote.measurement, &quote.channel_binding, &quote.nonce, &quote.tee_pub);
    if !crypto::verify(&quote.tee_pub, &message, &quote.signature) {
        return Err(RejectReason::SignatureInvalid);
    }
    if &quote.measurement != expected_measurement {
        return Err(RejectReason::MeasurementMismatch);
    }
    if &quote.channel_binding != expected_binding {
        return Err(RejectReason::BindingMismatch);
    }
    if &quote.nonce != expected_nonce {
        return Err(RejectReason::NonceMismatch);
    }
    Ok(())
}

/// [`verify_quote`] on serialized bytes.
pub fn verify_quote_bytes(
    manufacturer_root: &VerifyKey,
    quote: &[u8],
    expected_measurement: &Measurement,
    expected_binding: &ChannelBinding,
    expected_nonce: &Nonce,
) -> Result<(), RejectReason> {
    let quote = AttestationQuote::from_bytes(quote)?;
    verify_quote(manufacturer_root, &quote, expected_measurement, expected_binding, expected_nonce)
}
