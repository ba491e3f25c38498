//! Protocol messages and the channel every hop runs over.

mod channel;
mod messages;
mod transport;

pub use channel::{
    channel_binding, server_accept, ChannelError, ClientHandshake, SecureSession, ServerStaticKey, CLIENT_HELLO_LEN,
    SERVER_HELLO_LEN,
};
pub use messages::{
    decode, decode_any, encode, AttestChallengeMsg, AttestResponseMsg, DataBatchMsg, DecodeError, ForwardAckMsg,
    KeyAckMsg, KeyUploadMsg, Message, MessageKind, ResultMsg, StatsMsg, UploadAckMsg,
};
pub use transport::{
    serve, spawn_tcp_server, Connection, Direction, Endpoint, LocalTransport, RequestContext, ServerConnection,
    Service, TcpTransport, Transport, TranscriptEntry, WireError, MAX_FRAME_LEN,
};
