//! JSON message schemas.
//!
//! Every message is one JSON object with a `kind` tag. Binary fields are
//! standard padded base64 in fields suffixed `_b64`. Unknown fields are
//! ignored; missing fields are rejected.

use std::collections::BTreeMap;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::attestation::{AttestationQuote, Nonce, NONCE_LEN};
use crate::crypto::{DataKey, EncryptedRecord, SealedResult, UserId, IV_LEN, KEY_LEN};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed message: {0}")]
    Syntax(String),
    #[error("field `{field}`: {reason}")]
    Field { field: &'static str, reason: String },
    #[error("expected a `{expected}` message, got `{found}`")]
    UnexpectedKind { expected: MessageKind, found: MessageKind },
}

fn field_err(field: &'static str, reason: impl Into<String>) -> DecodeError {
    DecodeError::Field { field, reason: reason.into() }
}

fn b64_decode(field: &'static str, text: &str) -> Result<Vec<u8>, DecodeError> {
    B64.decode(text).map_err(|e| field_err(field, format!("invalid base64: {e}")))
}

fn b64_fixed<const N: usize>(field: &'static str, text: &str) -> Result<[u8; N], DecodeError> {
    let bytes = b64_decode(field, text)?;
    let len = bytes.len();
    bytes
        .try_into()
        .map_err(|_| field_err(field, format!("expected {N} bytes, got {len}")))
}

fn user_id(field: &'static str, text: String) -> Result<UserId, DecodeError> {
    UserId::new(text).map_err(|e| field_err(field, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    AttestChallenge,
    AttestResponse,
    KeyUpload,
    KeyAck,
    DataBatch,
    UploadAck,
    Trigger,
    Result,
    Ingest,
    IngestAck,
    Forward,
    ForwardAck,
    StatsRequest,
    Stats,
    PlainBatch,
    PlainAck,
    PlainResult,
    Error,
}

impl std::fmt::Display for MessageKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = serde_json::to_value(self).expect("kind serializes");
        f.write_str(name.as_str().expect("kind is a string"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestChallengeMsg {
    pub nonce: Nonce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestResponseMsg {
    /// Serialized [`AttestationQuote`]; kept as bytes so verification sees
    /// exactly what was sent.
    pub quote: Vec<u8>,
}

impl AttestResponseMsg {
    pub fn from_quote(quote: &AttestationQuote) -> Self {
        Self { quote: quote.to_bytes() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyUploadMsg {
    pub user_id: UserId,
    pub key: DataKey,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyAckMsg {
    pub user_id: UserId,
    /// An existing, different key was replaced.
    pub replaced: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DataBatchMsg {
    pub records: Vec<EncryptedRecord>,
}

impl DataBatchMsg {
    /// Raw iv + ciphertext bytes carried, before base64.
    pub fn raw_payload_bytes(&self) -> usize {
        self.records.iter().map(EncryptedRecord::wire_len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UploadAckMsg {
    pub accepted: u64,
    pub skipped_no_key: u64,
    pub failed_decrypt: u64,
}

impl UploadAckMsg {
    pub fn total(&self) -> u64 {
        self.accepted + self.skipped_no_key + self.failed_decrypt
    }

    pub fn merge(&mut self, other: &UploadAckMsg) {
        self.accepted += other.accepted;
        self.skipped_no_key += other.skipped_no_key;
        self.failed_decrypt += other.failed_decrypt;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultMsg {
    pub sealed: SealedResult,
    pub included_user_count: u64,
    pub record_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardAckMsg {
    pub batches: u64,
    pub ack: UploadAckMsg,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsMsg {
    pub records: u64,
    pub users: u64,
    pub total_bytes: u64,
    pub per_user: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    AttestChallenge(AttestChallengeMsg),
    AttestResponse(AttestResponseMsg),
    KeyUpload(KeyUploadMsg),
    KeyAck(KeyAckMsg),
    DataBatch(DataBatchMsg),
    UploadAck(UploadAckMsg),
    Trigger,
    Result(ResultMsg),
    Ingest(EncryptedRecord),
    IngestAck { stored: u64 },
    Forward,
    ForwardAck(ForwardAckMsg),
    StatsRequest,
    Stats(StatsMsg),
    PlainBatch { payloads: Vec<String> },
    PlainAck { accepted: u64 },
    PlainResult { result: String },
    Error { message: String },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::AttestChallenge(_) => MessageKind::AttestChallenge,
            Message::AttestResponse(_) => MessageKind::AttestResponse,
            Message::KeyUpload(_) => MessageKind::KeyUpload,
            Message::KeyAck(_) => MessageKind::KeyAck,
            Message::DataBatch(_) => MessageKind::DataBatch,
            Message::UploadAck(_) => MessageKind::UploadAck,
            Message::Trigger => MessageKind::Trigger,
            Message::Result(_) => MessageKind::Result,
            Message::Ingest(_) => MessageKind::Ingest,
            Message::IngestAck { .. } => MessageKind::IngestAck,
            Message::Forward => MessageKind::Forward,
            Message::ForwardAck(_) => MessageKind::ForwardAck,
            Message::StatsRequest => MessageKind::StatsRequest,
            Message::Stats(_) => MessageKind::Stats,
            Message::PlainBatch { .. } => MessageKind::PlainBatch,
            Message::PlainAck { .. } => MessageKind::PlainAck,
            Message::PlainResult { .. } => MessageKind::PlainResult,
            Message::Error { .. } => MessageKind::Error,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Message::Error { message: message.into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RawRecord {
    pub user_id: String,
    pub iv_b64: String,
    pub ct_b64: String,
}

impl RawRecord {
    pub(crate) fn from_record(r: &EncryptedRecord) -> Self {
        Self {
            user_id: r.user_id().as_str().to_owned(),
            iv_b64: B64.encode(r.iv()),
            ct_b64: B64.encode(r.ciphertext()),
        }
    }

    pub(crate) fn into_record(self) -> Result<EncryptedRecord, DecodeError> {
        let user_id = user_id("user_id", self.user_id)?;
        let iv: [u8; IV_LEN] = b64_fixed("iv_b64", &self.iv_b64)?;
        let ct = b64_decode("ct_b64", &self.ct_b64)?;
        EncryptedRecord::new(user_id, iv, ct).map_err(|e| field_err("ct_b64", e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Raw {
    AttestChallenge { nonce_b64: String },
    AttestResponse { quote_b64: String },
    KeyUpload { user_id: String, key_b64: String },
    KeyAck { user_id: String, replaced: bool },
    DataBatch { records: Vec<RawRecord> },
    UploadAck { accepted: u64, skipped_no_key: u64, failed_decrypt: u64 },
    Trigger {},
    Result { wrapped_key_b64: String, iv_b64: String, ct_b64: String, included_user_count: u64, record_count: u64 },
    Ingest { record: RawRecord },
    IngestAck { stored: u64 },
    Forward {},
    ForwardAck { batches: u64, accepted: u64, skipped_no_key: u64, failed_decrypt: u64 },
    StatsRequest {},
    Stats(StatsMsg),
    PlainBatch { payloads: Vec<String> },
    PlainAck { accepted: u64 },
    PlainResult { result: String },
    Error { message: String },
}

impl From<&Message> for Raw {
    fn from(msg: &Message) -> Self {
        match msg {
            Message::AttestChallenge(m) => Raw::AttestChallenge { nonce_b64: B64.encode(m.nonce) },
            Message::AttestResponse(m) => Raw::AttestResponse { quote_b64: B64.encode(&m.quote) },
            Message::KeyUpload(m) => {
                Raw::KeyUpload { user_id: m.user_id.as_str().to_owned(), key_b64: B64.encode(m.key.as_bytes()) }
            }
            Message::KeyAck(m) => Raw::KeyAck { user_id: m.user_id.as_str().to_owned(), replaced: m.replaced },
            Message::DataBatch(m) => Raw::DataBatch { records: m.records.iter().map(RawRecord::from_record).collect() },
            Message::UploadAck(a) => {
                Raw::UploadAck { accepted: a.accepted, skipped_no_key: a.skipped_no_key, failed_decrypt: a.failed_decrypt }
            }
            Message::Trigger => Raw::Trigger {},
            Message::Result(r) => Raw::Result {
                wrapped_key_b64: B64.encode(&r.sealed.wrapped_key),
                iv_b64: B64.encode(r.sealed.iv),
                ct_b64: B64.encode(&r.sealed.payload_ciphertext),
                included_user_count: r.included_user_count,
                record_count: r.record_count,
            },
            Message::Ingest(r) => Raw::Ingest { record: RawRecord::from_record(r) },
            Message::IngestAck { stored } => Raw::IngestAck { stored: *stored },
            Message::Forward => Raw::Forward {},
            Message::ForwardAck(f) => Raw::ForwardAck {
                batches: f.batches,
                accepted: f.ack.accepted,
                skipped_no_key: f.ack.skipped_no_key,
                failed_decrypt: f.ack.failed_decrypt,
            },
            Message::StatsRequest => Raw::StatsRequest {},
            Message::Stats(s) => Raw::Stats(s.clone()),
            Message::PlainBatch { payloads } => Raw::PlainBatch { payloads: payloads.clone() },
            Message::PlainAck { accepted } => Raw::PlainAck { accepted: *accepted },
            Message::PlainResult { result } => Raw::PlainResult { result: result.clone() },
            Message::Error { message } => Raw::Error { message: message.clone() },
        }
    }
}

impl TryFrom<Raw> for Message {
    type Error = DecodeError;

    fn try_from(raw: Raw) -> Result<Self, DecodeError> {
        Ok(match raw {
            Raw::AttestChallenge { nonce_b64 } => {
                Message::AttestChallenge(AttestChallengeMsg { nonce: b64_fixed::<NONCE_LEN>("nonce_b64", &nonce_b64)? })
            }
            Raw::AttestResponse { quote_b64 } => {
                Message::AttestResponse(AttestResponseMsg { quote: b64_decode("quote_b64", &quote_b64)? })
            }
            Raw::KeyUpload { user_id: id, key_b64 } => Message::KeyUpload(KeyUploadMsg {
                user_id: user_id("user_id", id)?,
                key: DataKey::from_bytes(b64_fixed::<KEY_LEN>("key_b64", &key_b64)?),
            }),
            Raw::KeyAck { user_id: id, replaced } => Message::KeyAck(KeyAckMsg { user_id: user_id("user_id", id)?, replaced }),
            Raw::DataBatch { records } => Message::DataBatch(DataBatchMsg {
                records: records.into_iter().map(RawRecord::into_record).collect::<Result<_, _>>()?,
            }),
            Raw::UploadAck { accepted, skipped_no_key, failed_decrypt } => {
                Message::UploadAck(UploadAckMsg { accepted, skipped_no_key, failed_decrypt })
            }
            Raw::Trigger {} => Message::Trigger,
            Raw::Result { wrapped_key_b64, iv_b64, ct_b64, included_user_count, record_count } => {
                let payload_ciphertext = b64_decode("ct_b64", &ct_b64)?;
                if payload_ciphertext.is_empty() || payload_ciphertext.len() % 16 != 0 {
                    return Err(field_err("ct_b64", "length is not a positive multiple of 16"));
                }
                Message::Result(ResultMsg {
                    sealed: SealedResult {
                        wrapped_key: b64_decode("wrapped_key_b64", &wrapped_key_b64)?,
                        iv: b64_fixed::<IV_LEN>("iv_b64", &iv_b64)?,
                        payload_ciphertext,
                    },
                    included_user_count,
                    record_count,
                })
            }
            Raw::Ingest { record } => Message::Ingest(record.into_record()?),
            Raw::IngestAck { stored } => Message::IngestAck { stored },
            Raw::Forward {} => Message::Forward,
            Raw::ForwardAck { batches, accepted, skipped_no_key, failed_decrypt } => Message::ForwardAck(ForwardAckMsg {
                batches,
                ack: UploadAckMsg { accepted, skipped_no_key, failed_decrypt },
            }),
            Raw::StatsRequest {} => Message::StatsRequest,
            Raw::Stats(s) => Message::Stats(s),
            Raw::PlainBatch { payloads } => Message::PlainBatch { payloads },
            Raw::PlainAck { accepted } => Message::PlainAck { accepted },
            Raw::PlainResult { result } => Message::PlainResult { result },
            Raw::Error { message } => Message::Error { message },
        })
    }
}

pub fn encode(msg: &Message) -> Vec<u8> {
    serde_json::to_vec(&Raw::from(msg)).expect("messages always serialize")
}

pub fn decode_any(bytes: &[u8]) -> Result<Message, DecodeError> {
    let raw: Raw = serde_json::from_slice(bytes).map_err(|e| DecodeError::Syntax(e.to_string()))?;
    Message::try_from(raw)
}

pub fn decode(bytes: &[u8], expected: MessageKind) -> Result<Message, DecodeError> {
    let msg = decode_any(bytes)?;
    if msg.kind() != expected {
        return Err(DecodeError::UnexpectedKind { expected, found: msg.kind() });
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_key_names_field() {
        let text = format!(r#"{{"kind":"key_upload","user_id":"u1","key_b64":"{}"}}"#, B64.encode([0u8; 31]));
        let err = decode(text.as_bytes(), MessageKind::KeyUpload).unwrap_err();
        assert_eq!(err, DecodeError::Field { field: "key_b64", reason: "expected 32 bytes, got 31".into() });
    }

    #[test]
    fn unknown_fields_ignored_missing_rejected() {
        let ok = br#"{"kind":"upload_ack","accepted":1,"skipped_no_key":2,"failed_decrypt":3,"extra":"x"}"#;
        assert_eq!(
            decode(ok, MessageKind::UploadAck).unwrap(),
            Message::UploadAck(UploadAckMsg { accepted: 1, skipped_no_key: 2, failed_decrypt: 3 })
        );
        let missing = br#"{"kind":"upload_ack","accepted":1,"skipped_no_key":2}"#;
        let err = decode(missing, MessageKind::UploadAck).unwrap_err();
        assert!(err.to_string().contains("failed_decrypt"), "{err}");
        assert!(matches!(decode(b"not json", MessageKind::Trigger), Err(DecodeError::Syntax(_))));
        assert!(matches!(
            decode(br#"{"kind":"trigger"}"#, MessageKind::Forward),
            Err(DecodeError::UnexpectedKind { .. })
        ));
    }

    #[test]
    fn bad_record_fields() {
        let bad_iv = format!(
            r#"{{"kind":"data_batch","records":[{{"user_id":"u","iv_b64":"{}","ct_b64":"{}"}}]}}"#,
            B64.encode([0u8; 8]),
            B64.encode([0u8; 16])
        );
        assert!(matches!(
            decode(bad_iv.as_bytes(), MessageKind::DataBatch),
            Err(DecodeError::Field { field: "iv_b64", .. })
        ));
        let bad_ct = format!(
            r#"{{"kind":"data_batch","records":[{{"user_id":"u","iv_b64":"{}","ct_b64":"{}"}}]}}"#,
            B64.encode([0u8; 16]),
            B64.encode([0u8; 15])
        );
        assert!(matches!(
            decode(bad_ct.as_bytes(), MessageKind::DataBatch),
            Err(DecodeError::Field { field: "ct_b64", .. })
        ));
        let bad_b64 = r#"{"kind":"attest_challenge","nonce_b64":"!!!"}"#;
        assert!(matches!(
            decode(bad_b64.as_bytes(), MessageKind::AttestChallenge),
            Err(DecodeError::Field { field: "nonce_b64", .. })
        ));
    }

    #[test]
    fn kind_display_matches_tag() {
        assert_eq!(MessageKind::DataBatch.to_string(), "data_batch");
        let bytes = encode(&Message::Trigger);
        assert_eq!(bytes, br#"{"kind":"trigger"}"#);
    }
}
