use std::sync::Mutex;

use crate::aggregation::{evaluate, AggregationSpec};
use crate::wire::{Message, RequestContext, Service};

/// Runs the same aggregation as the enclave over plaintext payloads. It has
/// no key store, no attestation, and no sealing.
///
/// Requests served: `plain_batch` → `plain_ack`, `trigger` → `plain_result`.
#[derive(Debug)]
pub struct PlainService {
    spec: AggregationSpec,
    payloads: Mutex<Vec<Vec<u8>>>,
}

impl PlainService {
    pub fn new(spec: AggregationSpec) -> Self {
        Self { spec, payloads: Mutex::new(Vec::new()) }
    }

    pub fn clear(&self) {
        self.payloads.lock().unwrap_or_else(|p| p.into_inner()).clear();
    }

    pub fn len(&self) -> usize {
        self.payloads.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Service for PlainService {
    fn handle(&self, _ctx: &RequestContext, msg: Message) -> Message {
        match msg {
            Message::PlainBatch { payloads } => {
                let accepted = payloads.len() as u64;
                self.payloads.lock().unwrap_or_else(|p| p.into_inner()).extend(payloads.into_iter().map(String::into_bytes));
                Message::PlainAck { accepted }
            }
            Message::Trigger => {
                let stored = self.payloads.lock().unwrap_or_else(|p| p.into_inner());
                let result = evaluate(&self.spec, stored.iter().map(Vec::as_slice)).result_text();
                Message::PlainResult { result }
            }
            other => Message::error(format!("plain service does not serve `{}`", other.kind())),
        }
    }
}
