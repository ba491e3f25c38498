//! The simulated TEE.
//!
//! Keys and decrypted records live only inside [`Enclave`]. The only
//! enclave output that depends on them is the sealed result; everything else
//! it emits is counters, quotes, and acknowledgements.
//!
//! Requests served (all over the channel in [`crate::wire`]):
//!
//! | request            | reply            |
//! |--------------------|------------------|
//! | `attest_challenge` | `attest_response`|
//! | `key_upload`       | `key_ack`        |
//! | `data_batch`       | `upload_ack`     |
//! | `trigger`          | `result`         |

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::aggregation::{evaluate, AggregationSpec, PlainRecord, SvmModel};
use crate::attestation::{
    measure, AttestationQuote, ChannelBinding, EnclaveIdentity, Manufacturer, Measurement, Nonce, TeeSigner,
    PROTOCOL_VERSION,
};
use crate::crypto::{decrypt_record, seal_result, DataKey, RecipientPublicKey, UserId};
use crate::error::{Error, Result};
use crate::wire::{
    AttestResponseMsg, DataBatchMsg, KeyAckMsg, KeyUploadMsg, Message, RequestContext, ResultMsg, Service, UploadAckMsg,
};

/// Default cap on the raw iv + ciphertext bytes of one batch.
pub const DEFAULT_MAX_BATCH_BYTES: usize = 10 * 1024 * 1024;

/// What the recipient publishes so users can recompute the measurement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedIdentity {
    pub protocol_version: u32,
    /// Canonical aggregation spec text.
    pub spec: String,
    /// SPKI DER of the recipient public key, base64.
    pub recipient_pub_b64: String,
    /// Canonical SVM model text, when the spec embeds one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

impl PublishedIdentity {
    pub fn new(spec: &AggregationSpec, recipient: &RecipientPublicKey) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            spec: spec.canonical(),
            recipient_pub_b64: B64.encode(recipient.to_der()),
            model: spec.model_text(),
        }
    }

    pub fn recipient_key(&self) -> Result<RecipientPublicKey> {
        let der = B64
            .decode(&self.recipient_pub_b64)
            .map_err(|e| Error::Config(format!("recipient_pub_b64: {e}")))?;
        Ok(RecipientPublicKey::from_der(&der)?)
    }

    pub fn aggregation_spec(&self) -> Result<AggregationSpec> {
        let model = self.model.as_deref().map(SvmModel::parse).transpose()?;
        Ok(AggregationSpec::parse(&self.spec, model)?)
    }

    /// Identity recomputed from the published material alone.
    pub fn identity(&self) -> Result<EnclaveIdentity> {
        let mut id = EnclaveIdentity::new(&self.spec, &self.recipient_key()?, self.model.as_deref());
        id.protocol_version = self.protocol_version;
        Ok(id)
    }

    pub fn measurement(&self) -> Result<Measurement> {
        Ok(measure(&self.identity()?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("identity serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("published identity: {e}")))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EnclaveConfig {
    pub max_batch_bytes: usize,
}

impl Default for EnclaveConfig {
    fn default() -> Self {
        Self { max_batch_bytes: DEFAULT_MAX_BATCH_BYTES }
    }
}

#[derive(Default)]
struct EnclaveState {
    key_store: HashMap<UserId, DataKey>,
    record_store: Vec<PlainRecord>,
}

pub struct Enclave {
    spec: AggregationSpec,
    identity: EnclaveIdentity,
    measurement: Measurement,
    recipient_pub: RecipientPublicKey,
    signer: TeeSigner,
    config: EnclaveConfig,
    state: Mutex<EnclaveState>,
    rng: Mutex<ChaCha20Rng>,
}

impl std::fmt::Debug for Enclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enclave")
            .field("spec", &self.spec.canonical())
            .field("measurement", &self.measurement)
            .finish_non_exhaustive()
    }
}

impl Enclave {
    pub fn launch(
        spec: AggregationSpec,
        recipient_pub: RecipientPublicKey,
        manufacturer: &Manufacturer,
        config: EnclaveConfig,
    ) -> Result<Self> {
        let mut rng = ChaCha20Rng::from_entropy();
        let signer = TeeSigner::provision(&mut rng, manufacturer);
        Self::with_signer(spec, recipient_pub, signer, config, rng)
    }

    pub fn with_signer(
        spec: AggregationSpec,
        recipient_pub: RecipientPublicKey,
        signer: TeeSigner,
        config: EnclaveConfig,
        rng: ChaCha20Rng,
    ) -> Result<Self> {
        spec.validate()?;
        let model = spec.model_text();
        let identity = EnclaveIdentity::new(&spec.canonical(), &recipient_pub, model.as_deref());
        let measurement = measure(&identity);
        Ok(Self {
            spec,
            identity,
            measurement,
            recipient_pub,
            signer,
            config,
            state: Mutex::new(EnclaveState::default()),
            rng: Mutex::new(rng),
        })
    }

    pub fn spec(&self) -> &AggregationSpec {
        &self.spec
    }

    pub fn identity(&self) -> &EnclaveIdentity {
        &self.identity
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn published_identity(&self) -> PublishedIdentity {
        PublishedIdentity::new(&self.spec, &self.recipient_pub)
    }

    fn state(&self) -> std::sync::MutexGuard<'_, EnclaveState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn handle_attest(&self, nonce: Nonce, binding: ChannelBinding) -> AttestResponseMsg {
        let quote: AttestationQuote = self.signer.issue_quote(self.measurement, binding, nonce);
        AttestResponseMsg::from_quote(&quote)
    }

    pub fn handle_key_upload(&self, msg: KeyUploadMsg) -> KeyAckMsg {
        let mut state = self.state();
        let previous = state.key_store.insert(msg.user_id.clone(), msg.key.clone());
        let replaced = previous.is_some_and(|k| k != msg.key);
        KeyAckMsg { user_id: msg.user_id, replaced }
    }

    /// Decrypts what it can. Records without a key are not kept, so they are
    /// never decrypted later even if the key arrives.
    pub fn handle_data_batch(&self, msg: DataBatchMsg) -> Result<UploadAckMsg> {
        let len = msg.raw_payload_bytes();
        if len > self.config.max_batch_bytes {
            return Err(Error::BatchTooLarge { len, max: self.config.max_batch_bytes });
        }
        let mut state = self.state();
        let mut ack = UploadAckMsg::default();
        let mut decrypted = Vec::with_capacity(msg.records.len());
        for rec in &msg.records {
            let Some(key) = state.key_store.get(rec.user_id()) else {
                ack.skipped_no_key += 1;
                continue;
            };
            match decrypt_record(key, rec) {
                Ok(payload) => {
                    ack.accepted += 1;
                    decrypted.push(PlainRecord { user_id: rec.user_id().clone(), payload });
                }
                Err(_) => ack.failed_decrypt += 1,
            }
        }
        state.record_store.extend(decrypted);
        Ok(ack)
    }

    pub fn handle_trigger(&self) -> Result<ResultMsg> {
        let state = self.state();
        let evaluation = evaluate(&self.spec, state.record_store.iter().map(|r| r.payload.as_slice()));
        let users: BTreeSet<&UserId> = state.record_store.iter().map(|r| &r.user_id).collect();
        let included_user_count = users.len() as u64;
        let record_count = state.record_store.len() as u64;
        drop(state);

        let text = evaluation.result_text();
        let mut rng = self.rng.lock().unwrap_or_else(|p| p.into_inner());
        let sealed = seal_result(&mut *rng, &self.recipient_pub, text.as_bytes())?;
        Ok(ResultMsg { sealed, included_user_count, record_count })
    }

    /// Drops decrypted records but keeps keys, so a new round can start
    /// without re-authorization.
    pub fn clear_records(&self) {
        self.state().record_store.clear();
    }

    pub fn key_count(&self) -> usize {
        self.state().key_store.len()
    }

    pub fn record_count(&self) -> usize {
        self.state().record_store.len()
    }

    pub fn has_key_for(&self, user: &UserId) -> bool {
        self.state().key_store.contains_key(user)
    }
}

impl Service for Enclave {
    fn handle(&self, ctx: &RequestContext, msg: Message) -> Message {
        match msg {
            Message::AttestChallenge(c) => Message::AttestResponse(self.handle_attest(c.nonce, ctx.channel_binding)),
            Message::KeyUpload(k) => Message::KeyAck(self.handle_key_upload(k)),
            Message::DataBatch(b) => match self.handle_data_batch(b) {
                Ok(ack) => Message::UploadAck(ack),
                Err(e) => Message::error(e.to_string()),
            },
            Message::Trigger => match self.handle_trigger() {
                Ok(r) => Message::Result(r),
                Err(e) => Message::error(e.to_string()),
            },
            other => Message::error(format!("enclave does not serve `{}`", other.kind())),
        }
    }
}

/// Shares one enclave between an in-process endpoint and the caller.
pub fn shared(enclave: Enclave) -> Arc<Enclave> {
    Arc::new(enclave)
}
