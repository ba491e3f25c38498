//! Request/response transport over the secure channel.
//!
//! Each request is one frame and gets exactly one reply frame. The first
//! frame of a connection is the client hello. On TCP every frame is prefixed
//! with its length as a big-endian `u32`.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::channel::{server_accept, ChannelError, ClientHandshake, SecureSession, ServerStaticKey};
use super::messages::{decode_any, encode, DecodeError, Message, MessageKind};
use crate::attestation::ChannelBinding;

pub const MAX_FRAME_LEN: usize = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("channel: {0}")]
    Channel(#[from] ChannelError),
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
    #[error("remote error: {0}")]
    Remote(String),
}

/// Per-connection facts a service may use.
#[derive(Debug, Clone, Copy)]
pub struct RequestContext {
    pub channel_binding: ChannelBinding,
}

pub trait Service: Send + Sync {
    fn handle(&self, ctx: &RequestContext, msg: Message) -> Message;
}

/// Server half of one connection, independent of the byte transport.
pub struct ServerConnection {
    service: Arc<dyn Service>,
    static_key: Arc<ServerStaticKey>,
    session: Option<SecureSession>,
    rng: ChaCha20Rng,
}

impl ServerConnection {
    pub fn new(service: Arc<dyn Service>, static_key: Arc<ServerStaticKey>) -> Self {
        Self { service, static_key, session: None, rng: ChaCha20Rng::from_entropy() }
    }

    pub fn on_frame(&mut self, frame: &[u8]) -> Result<Vec<u8>, WireError> {
        let Some(session) = self.session.as_mut() else {
            let (hello, session) = server_accept(&mut self.rng, &self.static_key, frame)?;
            self.session = Some(session);
            return Ok(hello);
        };
        let plain = session.open(frame)?;
        let reply = match decode_any(&plain) {
            Ok(msg) => {
                let ctx = RequestContext { channel_binding: session.channel_binding() };
                self.service.handle(&ctx, msg)
            }
            Err(e) => Message::error(e.to_string()),
        };
        Ok(session.seal(&encode(&reply)))
    }
}

pub trait Transport: Send {
    fn round_trip(&mut self, frame: &[u8]) -> Result<Vec<u8>, WireError>;
}

/// Calls the server connection directly in-process.
pub struct LocalTransport(ServerConnection);

impl Transport for LocalTransport {
    fn round_trip(&mut self, frame: &[u8]) -> Result<Vec<u8>, WireError> {
        self.0.on_frame(frame)
    }
}

fn write_frame(w: &mut impl Write, frame: &[u8]) -> Result<(), WireError> {
    if frame.len() > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(frame.len()));
    }
    w.write_all(&(frame.len() as u32).to_be_bytes())?;
    w.write_all(frame)?;
    w.flush()?;
    Ok(())
}

fn read_frame(r: &mut impl Read) -> Result<Vec<u8>, WireError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub struct TcpTransport(TcpStream);

impl TcpTransport {
    pub fn connect(addr: SocketAddr) -> Result<Self, WireError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self(stream))
    }
}

impl Transport for TcpTransport {
    fn round_trip(&mut self, frame: &[u8]) -> Result<Vec<u8>, WireError> {
        write_frame(&mut self.0, frame)?;
        read_frame(&mut self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Sent,
    Received,
}

/// A captured application message, before channel encryption.
#[derive(Debug, Clone)]
pub struct TranscriptEntry {
    pub direction: Direction,
    pub plaintext: Vec<u8>,
}

/// Client half of an established connection.
pub struct Connection {
    transport: Box<dyn Transport>,
    session: SecureSession,
    transcript: Option<Vec<TranscriptEntry>>,
}

impl Connection {
    pub fn establish<R: RngCore + CryptoRng>(
        rng: &mut R,
        mut transport: Box<dyn Transport>,
        pinned_server_key: Option<&[u8; 32]>,
    ) -> Result<Self, WireError> {
        let hs = ClientHandshake::start(rng);
        let server_hello = transport.round_trip(hs.hello())?;
        let session = hs.finish(&server_hello, pinned_server_key)?;
        Ok(Self { transport, session, transcript: None })
    }

    pub fn channel_binding(&self) -> ChannelBinding {
        self.session.channel_binding()
    }

    pub fn record_transcript(&mut self) {
        self.transcript.get_or_insert_with(Vec::new);
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        self.transcript.as_deref().unwrap_or_default()
    }

    pub fn request(&mut self, msg: &Message) -> Result<Message, WireError> {
        let plain = encode(msg);
        let frame = self.session.seal(&plain);
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptEntry { direction: Direction::Sent, plaintext: plain });
        }
        let reply_frame = self.transport.round_trip(&frame)?;
        let reply_plain = self.session.open(&reply_frame)?;
        let reply = decode_any(&reply_plain)?;
        if let Some(t) = self.transcript.as_mut() {
            t.push(TranscriptEntry { direction: Direction::Received, plaintext: reply_plain });
        }
        Ok(reply)
    }

    /// [`Connection::request`], turning `error` replies and unexpected kinds
    /// into errors.
    pub fn call(&mut self, msg: &Message, expected: MessageKind) -> Result<Message, WireError> {
        match self.request(msg)? {
            Message::Error { message } => Err(WireError::Remote(message)),
            reply if reply.kind() == expected => Ok(reply),
            reply => Err(DecodeError::UnexpectedKind { expected, found: reply.kind() }.into()),
        }
    }
}

/// Where a service can be reached.
#[derive(Clone)]
pub enum Endpoint {
    Local { service: Arc<dyn Service>, key: Arc<ServerStaticKey> },
    Tcp { addr: SocketAddr, pin: Option<[u8; 32]> },
}

impl std::fmt::Debug for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Local { .. } => f.write_str("Endpoint::Local"),
            Endpoint::Tcp { addr, .. } => write!(f, "Endpoint::Tcp({addr})"),
        }
    }
}

impl Endpoint {
    pub fn local(service: Arc<dyn Service>) -> Self {
        let key = ServerStaticKey::generate(&mut ChaCha20Rng::from_entropy());
        Endpoint::Local { service, key: Arc::new(key) }
    }

    pub fn connect<R: RngCore + CryptoRng>(&self, rng: &mut R) -> Result<Connection, WireError> {
        match self {
            Endpoint::Local { service, key } => {
                let server = ServerConnection::new(Arc::clone(service), Arc::clone(key));
                Connection::establish(rng, Box::new(LocalTransport(server)), Some(&key.public()))
            }
            Endpoint::Tcp { addr, pin } => Connection::establish(rng, Box::new(TcpTransport::connect(*addr)?), pin.as_ref()),
        }
    }
}

fn serve_connection(stream: TcpStream, mut conn: ServerConnection) {
    let peer = stream.peer_addr().ok();
    let _ = stream.set_nodelay(true);
    let mut reader = match stream.try_clone() {
        Ok(s) => s,
        Err(e) => {
            log::warn!("cannot clone stream: {e}");
            return;
        }
    };
    let mut writer = stream;
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(WireError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => return,
            Err(e) => {
                log::debug!("connection {peer:?} closed: {e}");
                return;
            }
        };
        let reply = match conn.on_frame(&frame) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("dropping connection {peer:?}: {e}");
                return;
            }
        };
        if let Err(e) = write_frame(&mut writer, &reply) {
            log::debug!("write to {peer:?} failed: {e}");
            return;
        }
    }
}

/// Accepts connections until the listener fails, one thread per connection.
pub fn serve(listener: TcpListener, service: Arc<dyn Service>, key: Arc<ServerStaticKey>) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let conn = ServerConnection::new(Arc::clone(&service), Arc::clone(&key));
        thread::spawn(move || serve_connection(stream, conn));
    }
    Ok(())
}

/// Runs [`serve`] on a background thread.
pub fn spawn_tcp_server(
    listener: TcpListener,
    service: Arc<dyn Service>,
    key: Arc<ServerStaticKey>,
) -> io::Result<Endpoint> {
    let addr = listener.local_addr()?;
    let pin = key.public();
    thread::spawn(move || {
        if let Err(e) = serve(listener, service, key) {
            log::warn!("server on {addr} stopped: {e}");
        }
    });
    Ok(Endpoint::Tcp { addr, pin: Some(pin) })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo;

    impl Service for Echo {
        fn handle(&self, ctx: &RequestContext, msg: Message) -> Message {
            match msg {
                Message::PlainBatch { payloads } => Message::PlainAck { accepted: payloads.len() as u64 },
                Message::StatsRequest => Message::PlainResult { result: ctx.channel_binding[0].to_string() },
                _ => Message::error("unsupported"),
            }
        }
    }

    fn exercise(endpoint: &Endpoint) {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut conn = endpoint.connect(&mut rng).unwrap();
        conn.record_transcript();
        let reply = conn.call(&Message::PlainBatch { payloads: vec!["a".into(), "b".into()] }, MessageKind::PlainAck);
        assert_eq!(reply.unwrap(), Message::PlainAck { accepted: 2 });
        let Message::PlainResult { result } = conn.call(&Message::StatsRequest, MessageKind::PlainResult).unwrap() else {
            panic!()
        };
        assert_eq!(result, conn.channel_binding()[0].to_string());
        assert!(matches!(conn.call(&Message::Trigger, MessageKind::Result), Err(WireError::Remote(_))));
        assert_eq!(conn.transcript().len(), 6);
        assert_eq!(conn.transcript()[0].direction, Direction::Sent);
    }

    #[test]
    fn local_endpoint() {
        exercise(&Endpoint::local(Arc::new(Echo)));
    }

    #[test]
    fn tcp_endpoint() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let key = Arc::new(ServerStaticKey::generate(&mut ChaCha20Rng::seed_from_u64(1)));
        let endpoint = spawn_tcp_server(listener, Arc::new(Echo), key).unwrap();
        exercise(&endpoint);
        exercise(&endpoint);

        let Endpoint::Tcp { addr, .. } = endpoint else { unreachable!() };
        let wrong_pin = Endpoint::Tcp { addr, pin: Some([1; 32]) };
        assert!(matches!(
            wrong_pin.connect(&mut ChaCha20Rng::seed_from_u64(2)),
            Err(WireError::Channel(ChannelError::PinMismatch))
        ));
    }
}
