//! Confidential aggregation over a simulated trusted execution environment.
//!
//! Users encrypt records under their own keys and park them at an untrusted
//! [`middleware`]. After attesting the [`enclave`], each user releases its key
//! to it. The enclave decrypts, runs one fixed [`aggregation`], and seals the
//! result to the recipient's public key.

pub mod actors;
pub mod aggregation;
pub mod attestation;
pub mod benchmark;
pub mod crypto;
pub mod enclave;
pub mod error;
pub mod middleware;
pub mod taxi;
pub mod wire;

pub use actors::{recipient_deploy, Authorization, Collected, RecipientActor, UserActor};
pub use aggregation::{AggregateOutput, AggregationError, AggregationSpec, SvmModel};
pub use attestation::{AttestationQuote, EnclaveIdentity, Manufacturer, Measurement, RejectReason};
pub use crypto::{DataKey, EncryptedRecord, RecipientKeyPair, RecipientPrivateKey, RecipientPublicKey, UserId};
pub use enclave::{Enclave, EnclaveConfig, PublishedIdentity};
pub use error::{Error, Result};
pub use middleware::{Middleware, MiddlewareConfig, RecordStore};
pub use wire::{Endpoint, Message, MessageKind};
