use std::io;

use crate::aggregation::AggregationError;
use crate::attestation::RejectReason;
use crate::crypto::CryptoError;
use crate::wire::{DecodeError, WireError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("attestation rejected: {0}")]
    Attestation(RejectReason),
    #[error("sealed result failed integrity check")]
    Integrity,
    #[error("batch of {len} bytes exceeds limit of {max}")]
    BatchTooLarge { len: usize, max: usize },
    #[error("line {line}: {reason}")]
    Persist { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Config(String),
    #[error("benchmark: {0}")]
    Benchmark(String),
}

impl From<DecodeError> for Error {
    fn from(e: DecodeError) -> Self {
        Error::Wire(WireError::Decode(e))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
