//! User and recipient clients.

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::aggregation::{AggregateOutput, AggregationSpec};
use crate::attestation::{verify_quote_bytes, Manufacturer, Measurement, Nonce, RejectReason, TeeSigner, NONCE_LEN};
use crate::crypto::{
    encrypt_record, open_result, random_iv, DataKey, EncryptedRecord, RecipientKeyPair, UserId, VerifyKey,
};
use crate::enclave::{Enclave, EnclaveConfig, PublishedIdentity};
use crate::error::{Error, Result};
use crate::wire::{AttestChallengeMsg, Connection, Endpoint, KeyUploadMsg, Message, MessageKind, ResultMsg};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Authorization {
    Authorized,
    Refused(RejectReason),
}

impl Authorization {
    pub fn is_authorized(&self) -> bool {
        matches!(self, Authorization::Authorized)
    }
}

fn fresh_nonce<R: RngCore + CryptoRng>(rng: &mut R) -> Nonce {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    nonce
}

/// Runs the challenge/response on an open connection and returns the
/// verification outcome.
pub fn attest_connection<R: RngCore + CryptoRng>(
    rng: &mut R,
    conn: &mut Connection,
    root: &VerifyKey,
    expected: &Measurement,
) -> Result<std::result::Result<(), RejectReason>> {
    let nonce = fresh_nonce(rng);
    let reply = conn.call(&Message::AttestChallenge(AttestChallengeMsg { nonce }), MessageKind::AttestResponse)?;
    let Message::AttestResponse(resp) = reply else { unreachable!("call checks the kind") };
    Ok(verify_quote_bytes(root, &resp.quote, expected, &conn.channel_binding(), &nonce))
}

/// A data owner. The data key leaves this struct only inside a `key_upload`
/// sent after the quote on that same channel verified.
pub struct UserActor {
    user_id: UserId,
    data_key: DataKey,
    expected_measurement: Measurement,
    manufacturer_root: VerifyKey,
    middleware: Endpoint,
    authorized_for: Option<Measurement>,
}

impl std::fmt::Debug for UserActor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UserActor")
            .field("user_id", &self.user_id)
            .field("expected_measurement", &self.expected_measurement)
            .finish_non_exhaustive()
    }
}

impl UserActor {
    /// The expected measurement is recomputed here from the publication, not
    /// taken from the enclave.
    pub fn new(
        user_id: UserId,
        data_key: DataKey,
        published: &PublishedIdentity,
        manufacturer_root: VerifyKey,
        middleware: Endpoint,
    ) -> Result<Self> {
        Ok(Self {
            user_id,
            data_key,
            expected_measurement: published.measurement()?,
            manufacturer_root,
            middleware,
            authorized_for: None,
        })
    }

    pub fn generate<R: RngCore + CryptoRng>(
        rng: &mut R,
        user_id: UserId,
        published: &PublishedIdentity,
        manufacturer_root: VerifyKey,
        middleware: Endpoint,
    ) -> Result<Self> {
        Self::new(user_id, DataKey::generate(rng), published, manufacturer_root, middleware)
    }

    pub fn user_id(&self) -> &UserId {
        &self.user_id
    }

    pub fn data_key(&self) -> &DataKey {
        &self.data_key
    }

    pub fn expected_measurement(&self) -> Measurement {
        self.expected_measurement
    }

    pub fn is_authorized(&self) -> bool {
        self.authorized_for == Some(self.expected_measurement)
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&self, rng: &mut R, payload: &[u8]) -> Result<EncryptedRecord> {
        Ok(encrypt_record(&self.data_key, self.user_id.clone(), payload, &random_iv(rng))?)
    }

    /// Encrypts under a fresh IV and ingests at the middleware. Returns the
    /// store length reported back.
    pub fn submit<R: RngCore + CryptoRng>(&self, rng: &mut R, payload: &[u8]) -> Result<u64> {
        let record = self.encrypt(rng, payload)?;
        let mut conn = self.middleware.connect(rng)?;
        submit_record(&mut conn, record)
    }

    pub fn authorize<R: RngCore + CryptoRng>(&mut self, rng: &mut R, enclave: &Endpoint) -> Result<Authorization> {
        if self.is_authorized() {
            return Ok(Authorization::Authorized);
        }
        let mut conn = enclave.connect(rng)?;
        self.authorize_over(rng, &mut conn)
    }

    /// On rejection nothing further is sent on `conn`.
    pub fn authorize_over<R: RngCore + CryptoRng>(
        &mut self,
        rng: &mut R,
        conn: &mut Connection,
    ) -> Result<Authorization> {
        if let Err(reason) = attest_connection(rng, conn, &self.manufacturer_root, &self.expected_measurement)? {
            log::info!("user {} refused enclave: {reason}", self.user_id);
            return Ok(Authorization::Refused(reason));
        }
        let upload = KeyUploadMsg { user_id: self.user_id.clone(), key: self.data_key.clone() };
        conn.call(&Message::KeyUpload(upload), MessageKind::KeyAck)?;
        self.authorized_for = Some(self.expected_measurement);
        Ok(Authorization::Authorized)
    }
}

/// Ingests one record over an open middleware connection.
pub fn submit_record(conn: &mut Connection, record: EncryptedRecord) -> Result<u64> {
    let Message::IngestAck { stored } = conn.call(&Message::Ingest(record), MessageKind::IngestAck)? else {
        unreachable!("call checks the kind")
    };
    Ok(stored)
}

/// An opened aggregate with the enclave's inclusion counters.
#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub output: AggregateOutput,
    pub included_user_count: u64,
    pub record_count: u64,
}

pub struct RecipientActor {
    keys: RecipientKeyPair,
    published: PublishedIdentity,
    spec: AggregationSpec,
    measurement: Measurement,
    manufacturer_root: VerifyKey,
}

impl std::fmt::Debug for RecipientActor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecipientActor").field("spec", &self.published.spec).finish_non_exhaustive()
    }
}

impl RecipientActor {
    pub fn new(keys: RecipientKeyPair, published: PublishedIdentity, manufacturer_root: VerifyKey) -> Result<Self> {
        if published.recipient_key()? != keys.public_key {
            return Err(Error::Config("published identity names a different recipient key".into()));
        }
        let spec = published.aggregation_spec()?;
        let measurement = published.measurement()?;
        Ok(Self { keys, published, spec, measurement, manufacturer_root })
    }

    pub fn published(&self) -> &PublishedIdentity {
        &self.published
    }

    pub fn spec(&self) -> &AggregationSpec {
        &self.spec
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn keys(&self) -> &RecipientKeyPair {
        &self.keys
    }

    /// Attests the enclave, then requests the sealed aggregate.
    pub fn trigger<R: RngCore + CryptoRng>(&self, rng: &mut R, enclave: &Endpoint) -> Result<ResultMsg> {
        let mut conn = enclave.connect(rng)?;
        attest_connection(rng, &mut conn, &self.manufacturer_root, &self.measurement)?.map_err(Error::Attestation)?;
        let Message::Result(result) = conn.call(&Message::Trigger, MessageKind::Result)? else {
            unreachable!("call checks the kind")
        };
        Ok(result)
    }

    pub fn open(&self, result: &ResultMsg) -> Result<AggregateOutput> {
        let plain = open_result(&self.keys.private_key, &result.sealed).map_err(|_| Error::Integrity)?;
        let text = String::from_utf8(plain).map_err(|_| Error::Integrity)?;
        Ok(AggregateOutput::from_text(&self.spec, &text)?)
    }

    pub fn collect<R: RngCore + CryptoRng>(&self, rng: &mut R, enclave: &Endpoint) -> Result<Collected> {
        let result = self.trigger(rng, enclave)?;
        Ok(Collected {
            output: self.open(&result)?,
            included_user_count: result.included_user_count,
            record_count: result.record_count,
        })
    }
}

/// Launches an enclave for `spec` bound to the recipient key and returns the
/// publication users verify against. All enclave randomness derives from
/// `rng`.
pub fn recipient_deploy<R: RngCore + CryptoRng>(
    rng: &mut R,
    spec: AggregationSpec,
    keys: RecipientKeyPair,
    manufacturer: &Manufacturer,
    config: EnclaveConfig,
) -> Result<(RecipientActor, Enclave, PublishedIdentity)> {
    let signer = TeeSigner::provision(rng, manufacturer);
    let enclave_rng = ChaCha20Rng::from_rng(&mut *rng).map_err(|e| Error::Config(e.to_string()))?;
    let enclave = Enclave::with_signer(spec, keys.public_key.clone(), signer, config, enclave_rng)?;
    let published = enclave.published_identity();
    let actor = RecipientActor::new(keys, published.clone(), manufacturer.root_key())?;
    Ok((actor, enclave, published))
}
