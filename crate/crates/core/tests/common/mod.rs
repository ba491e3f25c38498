#![allow(dead_code)]

use std::sync::{Arc, Mutex, OnceLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use teeagg::crypto::RecipientKeyPair;
use teeagg::wire::{AttestResponseMsg, Direction, RequestContext, Service, TranscriptEntry};
use teeagg::{
    recipient_deploy, AggregationSpec, DataKey, Enclave, EnclaveConfig, Endpoint, Manufacturer, Message, Middleware,
    PublishedIdentity, RecipientActor, UserActor, UserId,
};

/// RSA generation dominates setup, so every test shares a few key pairs.
pub fn recipient_keys(i: usize) -> RecipientKeyPair {
    static KEYS: OnceLock<Vec<RecipientKeyPair>> = OnceLock::new();
    KEYS.get_or_init(|| {
        let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
        (0..3).map(|_| RecipientKeyPair::generate(&mut rng).unwrap()).collect()
    })[i]
        .clone()
}

pub struct World {
    pub rng: ChaCha20Rng,
    pub recipient: RecipientActor,
    pub enclave: Arc<Enclave>,
    pub published: PublishedIdentity,
    pub mw: Arc<Middleware>,
    pub enclave_ep: Endpoint,
    pub mw_ep: Endpoint,
}

impl World {
    pub fn new(spec: AggregationSpec, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (recipient, enclave, published) =
            recipient_deploy(&mut rng, spec, recipient_keys(0), &Manufacturer::default(), EnclaveConfig::default())
                .unwrap();
        let enclave = Arc::new(enclave);
        let enclave_ep = Endpoint::local(enclave.clone());
        let mw = Arc::new(Middleware::in_memory().with_enclave(enclave_ep.clone()));
        let mw_ep = Endpoint::local(mw.clone());
        Self { rng, recipient, enclave, published, mw, enclave_ep, mw_ep }
    }

    pub fn user(&mut self, name: &str) -> UserActor {
        let root = Manufacturer::default().root_key();
        UserActor::generate(&mut self.rng, UserId::new(name).unwrap(), &self.published, root, self.mw_ep.clone())
            .unwrap()
    }
}

/// Whether `key` appears, raw or base64, in anything sent.
pub fn key_was_sent(transcript: &[TranscriptEntry], key: &DataKey) -> bool {
    let b64 = B64.encode(key.as_bytes());
    transcript.iter().filter(|e| e.direction == Direction::Sent).any(|e| {
        contains(&e.plaintext, key.as_bytes()) || contains(&e.plaintext, b64.as_bytes())
    })
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// A host that relays challenges to the real enclave over its own channel.
pub struct Relay {
    pub upstream: Endpoint,
}

impl Service for Relay {
    fn handle(&self, _ctx: &RequestContext, msg: Message) -> Message {
        let mut conn = self.upstream.connect(&mut ChaCha20Rng::from_entropy()).unwrap();
        conn.request(&msg).unwrap()
    }
}

/// A host that answers every challenge with the first quote it obtained.
pub struct Replayer {
    pub enclave: Arc<Enclave>,
    pub first: Mutex<Option<AttestResponseMsg>>,
}

impl Service for Replayer {
    fn handle(&self, ctx: &RequestContext, msg: Message) -> Message {
        match msg {
            Message::AttestChallenge(c) => {
                let mut first = self.first.lock().unwrap();
                let resp = first.get_or_insert_with(|| self.enclave.handle_attest(c.nonce, ctx.channel_binding));
                Message::AttestResponse(resp.clone())
            }
            other => self.enclave.handle(ctx, other),
        }
    }
}
