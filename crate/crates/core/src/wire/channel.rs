//! Encrypted, server-authenticated channel with an attestation binding.
//!
//! # Handshake
//!
//! ```text
//! client -> server   "TCH1" || client_ephemeral_pub (32)
//! server -> client   "TSH1" || server_static_pub (32) || server_ephemeral_pub (32)
//! ```
//!
//! Both sides compute
//!
//! ```text
//! ikm  = X25519(c_eph, s_eph) || X25519(c_eph, s_static)
//! salt = SHA-256(client_hello || server_hello)
//! c2s  = HKDF-SHA256(salt, ikm, "teeagg-channel-v1 c2s")[..32]
//! s2c  = HKDF-SHA256(salt, ikm, "teeagg-channel-v1 s2c")[..32]
//! binding = SHA-256("teeagg-channel-binding-v1" || server_static_pub || server_ephemeral_pub)
//! ```
//!
//! Frames after the handshake are AES-256-GCM under the direction's key with
//! a 96-bit nonce of four zero bytes followed by a big-endian 64-bit frame
//! counter starting at zero. Clients authenticate non-enclave servers by
//! pinning `server_static_pub`; enclave servers are authenticated by a quote
//! over `binding`.

use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce as GcmNonce};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use x25519_dalek::{PublicKey, StaticSecret};

use crate::attestation::ChannelBinding;

const CLIENT_MAGIC: &[u8; 4] = b"TCH1";
const SERVER_MAGIC: &[u8; 4] = b"TSH1";
pub const CLIENT_HELLO_LEN: usize = 4 + 32;
pub const SERVER_HELLO_LEN: usize = 4 + 64;
const BINDING_TAG: &[u8] = b"teeagg-channel-binding-v1";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChannelError {
    #[error("malformed handshake message")]
    MalformedHello,
    #[error("key exchange produced a non-contributory secret")]
    WeakKey,
    #[error("server key does not match pinned key")]
    PinMismatch,
    #[error("frame failed authentication")]
    BadFrame,
}

/// A server's long-term channel key.
pub struct ServerStaticKey(StaticSecret);

impl ServerStaticKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self(StaticSecret::random_from_rng(rng))
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(StaticSecret::from(bytes))
    }

    pub fn public(&self) -> [u8; 32] {
        PublicKey::from(&self.0).to_bytes()
    }
}

impl std::fmt::Debug for ServerStaticKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ServerStaticKey(<redacted>)")
    }
}

pub fn channel_binding(server_static_pub: &[u8; 32], server_eph_pub: &[u8; 32]) -> ChannelBinding {
    let mut h = Sha256::new();
    h.update(BINDING_TAG);
    h.update(server_static_pub);
    h.update(server_eph_pub);
    h.finalize().into()
}

/// One side of an established channel.
pub struct SecureSession {
    send: Aes256Gcm,
    recv: Aes256Gcm,
    send_counter: u64,
    recv_counter: u64,
    binding: ChannelBinding,
    server_static_pub: [u8; 32],
}

impl std::fmt::Debug for SecureSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureSession")
            .field("send_counter", &self.send_counter)
            .field("recv_counter", &self.recv_counter)
            .finish_non_exhaustive()
    }
}

fn frame_nonce(counter: u64) -> [u8; 12] {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&counter.to_be_bytes());
    n
}

impl SecureSession {
    fn derive(
        ikm: &[u8],
        client_hello: &[u8],
        server_hello: &[u8],
        is_server: bool,
        binding: ChannelBinding,
        server_static_pub: [u8; 32],
    ) -> Self {
        let salt: [u8; 32] = Sha256::new().chain_update(client_hello).chain_update(server_hello).finalize().into();
        let hk = Hkdf::<Sha256>::new(Some(&salt), ikm);
        let mut c2s = [0u8; 32];
        let mut s2c = [0u8; 32];
        hk.expand(b"teeagg-channel-v1 c2s", &mut c2s).expect("32 bytes is a valid HKDF length");
        hk.expand(b"teeagg-channel-v1 s2c", &mut s2c).expect("32 bytes is a valid HKDF length");
        let (send, recv) = if is_server { (s2c, c2s) } else { (c2s, s2c) };
        Self {
            send: Aes256Gcm::new(&send.into()),
            recv: Aes256Gcm::new(&recv.into()),
            send_counter: 0,
            recv_counter: 0,
            binding,
            server_static_pub,
        }
    }

    pub fn seal(&mut self, plaintext: &[u8]) -> Vec<u8> {
        let nonce = frame_nonce(self.send_counter);
        self.send_counter += 1;
        self.send
            .encrypt(GcmNonce::from_slice(&nonce), plaintext)
            .expect("AES-GCM encryption does not fail for in-memory buffers")
    }

    pub fn open(&mut self, frame: &[u8]) -> Result<Vec<u8>, ChannelError> {
        let nonce = frame_nonce(self.recv_counter);
        let plain = self
            .recv
            .decrypt(GcmNonce::from_slice(&nonce), frame)
            .map_err(|_| ChannelError::BadFrame)?;
        self.recv_counter += 1;
        Ok(plain)
    }

    pub fn channel_binding(&self) -> ChannelBinding {
        self.binding
    }

    pub fn server_static_pub(&self) -> [u8; 32] {
        self.server_static_pub
    }
}

pub struct ClientHandshake {
    eph: StaticSecret,
    hello: Vec<u8>,
}

impl ClientHandshake {
    pub fn start<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let eph = StaticSecret::random_from_rng(rng);
        let mut hello = CLIENT_MAGIC.to_vec();
        hello.extend_from_slice(PublicKey::from(&eph).as_bytes());
        Self { eph, hello }
    }

    pub fn hello(&self) -> &[u8] {
        &self.hello
    }

    pub fn finish(self, server_hello: &[u8], pinned_server_key: Option<&[u8; 32]>) -> Result<SecureSession, ChannelError> {
        if server_hello.len() != SERVER_HELLO_LEN || &server_hello[..4] != SERVER_MAGIC {
            return Err(ChannelError::MalformedHello);
        }
        let s_static: [u8; 32] = server_hello[4..36].try_into().expect("length checked");
        let s_eph: [u8; 32] = server_hello[36..68].try_into().expect("length checked");
        if pinned_server_key.is_some_and(|pin| pin != &s_static) {
            return Err(ChannelError::PinMismatch);
        }
        let dh1 = self.eph.diffie_hellman(&PublicKey::from(s_eph));
        let dh2 = self.eph.diffie_hellman(&PublicKey::from(s_static));
        if !dh1.was_contributory() || !dh2.was_contributory() {
            return Err(ChannelError::WeakKey);
        }
        let mut ikm = dh1.as_bytes().to_vec();
        ikm.extend_from_slice(dh2.as_bytes());
        Ok(SecureSession::derive(
            &ikm,
            &self.hello,
            server_hello,
            false,
            channel_binding(&s_static, &s_eph),
            s_static,
        ))
    }
}

/// Server side of the handshake: returns the server hello and the session.
pub fn server_accept<R: RngCore + CryptoRng>(
    rng: &mut R,
    static_key: &ServerStaticKey,
    client_hello: &[u8],
) -> Result<(Vec<u8>, SecureSession), ChannelError> {
    if client_hello.len() != CLIENT_HELLO_LEN || &client_hello[..4] != CLIENT_MAGIC {
        return Err(ChannelError::MalformedHello);
    }
    let c_eph: [u8; 32] = client_hello[4..].try_into().expect("length checked");
    let c_eph = PublicKey::from(c_eph);
    let s_eph = StaticSecret::random_from_rng(rng);
    let s_eph_pub = PublicKey::from(&s_eph).to_bytes();
    let s_static_pub = static_key.public();

    let dh1 = s_eph.diffie_hellman(&c_eph);
    let dh2 = static_key.0.diffie_hellman(&c_eph);
    if !dh1.was_contributory() || !dh2.was_contributory() {
        return Err(ChannelError::WeakKey);
    }
    let mut server_hello = SERVER_MAGIC.to_vec();
    server_hello.extend_from_slice(&s_static_pub);
    server_hello.extend_from_slice(&s_eph_pub);

    let mut ikm = dh1.as_bytes().to_vec();
    ikm.extend_from_slice(dh2.as_bytes());
    let session = SecureSession::derive(
        &ikm,
        client_hello,
        &server_hello,
        true,
        channel_binding(&s_static_pub, &s_eph_pub),
        s_static_pub,
    );
    Ok((server_hello, session))
}
