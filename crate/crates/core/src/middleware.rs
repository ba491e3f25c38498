//! Ciphertext store between users and the enclave.
//!
//! Requests served: `ingest` → `ingest_ack`, `forward` → `forward_ack`,
//! `stats_request` → `stats`. The store never holds key material; records
//! are kept exactly as received.
//!
//! On disk the store is one JSON object per line, each a `data_batch`
//! message carrying one record plus an `ingested_at_ms` field.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Deserialize;

use crate::crypto::{EncryptedRecord, IV_LEN};
use crate::enclave::DEFAULT_MAX_BATCH_BYTES;
use crate::error::{Error, Result};
use crate::wire::{
    decode, encode, DataBatchMsg, Endpoint, ForwardAckMsg, Message, MessageKind, RequestContext, Service, StatsMsg,
    WireError,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub record: EncryptedRecord,
    pub ingested_at_ms: u64,
}

/// Append-only record sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecordStore {
    records: Vec<StoredRecord>,
}

#[derive(Deserialize)]
struct LineMeta {
    #[serde(default)]
    ingested_at_ms: u64,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn encode_line(stored: &StoredRecord) -> String {
    let msg = Message::DataBatch(DataBatchMsg { records: vec![stored.record.clone()] });
    let mut value: serde_json::Value = serde_json::from_slice(&encode(&msg)).expect("encoded message is JSON");
    value["ingested_at_ms"] = stored.ingested_at_ms.into();
    value.to_string()
}

fn decode_line(line: &str) -> std::result::Result<Vec<StoredRecord>, String> {
    let Message::DataBatch(batch) = decode(line.as_bytes(), MessageKind::DataBatch).map_err(|e| e.to_string())? else {
        unreachable!("decode checks the kind")
    };
    let meta: LineMeta = serde_json::from_str(line).map_err(|e| e.to_string())?;
    Ok(batch.records.into_iter().map(|record| StoredRecord { record, ingested_at_ms: meta.ingested_at_ms }).collect())
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, record: EncryptedRecord, ingested_at_ms: u64) {
        self.records.push(StoredRecord { record, ingested_at_ms });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StoredRecord] {
        &self.records
    }

    pub fn snapshot(&self) -> Vec<EncryptedRecord> {
        self.records.iter().map(|s| s.record.clone()).collect()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }

    pub fn stats(&self) -> StatsMsg {
        let mut per_user = BTreeMap::new();
        let mut total_bytes = 0u64;
        for s in &self.records {
            *per_user.entry(s.record.user_id().as_str().to_owned()).or_insert(0u64) += 1;
            total_bytes += (IV_LEN + s.record.ciphertext().len()) as u64;
        }
        StatsMsg { records: self.records.len() as u64, users: per_user.len() as u64, total_bytes, per_user }
    }

    /// The newline-delimited on-disk encoding of the whole store.
    pub fn dump_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for s in &self.records {
            out.extend_from_slice(encode_line(s).as_bytes());
            out.push(b'\n');
        }
        out
    }

    pub fn persist(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.dump_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Blank lines are skipped. Line numbers in errors start at 1.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut store = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let records = decode_line(&line).map_err(|reason| Error::Persist { line: i + 1, reason })?;
            store.records.extend(records);
        }
        Ok(store)
    }
}

/// Chunks records so each chunk's iv + ciphertext total stays within
/// `max_bytes`. A single oversized record forms its own chunk. An empty input
/// yields one empty chunk.
pub fn chunk_records(records: Vec<EncryptedRecord>, max_bytes: usize) -> Vec<DataBatchMsg> {
    let mut out = Vec::new();
    let mut current = DataBatchMsg::default();
    let mut size = 0usize;
    for rec in records {
        let len = rec.wire_len();
        if !current.records.is_empty() && size + len > max_bytes {
            out.push(std::mem::take(&mut current));
            size = 0;
        }
        size += len;
        current.records.push(rec);
    }
    if !current.records.is_empty() || out.is_empty() {
        out.push(current);
    }
    out
}

#[derive(Debug, Clone)]
pub struct MiddlewareConfig {
    pub max_batch_bytes: usize,
    /// Appended to on every ingest when set.
    pub persist_path: Option<PathBuf>,
    /// Attempts at establishing the enclave connection per forward.
    pub connect_attempts: u32,
    pub retry_backoff: Duration,
}

impl Default for MiddlewareConfig {
    fn default() -> Self {
        Self {
            max_batch_bytes: DEFAULT_MAX_BATCH_BYTES,
            persist_path: None,
            connect_attempts: 3,
            retry_backoff: Duration::from_millis(100),
        }
    }
}

pub struct Middleware {
    store: RwLock<RecordStore>,
    config: MiddlewareConfig,
    enclave: Option<Endpoint>,
    persist: Mutex<Option<File>>,
}

impl std::fmt::Debug for Middleware {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Middleware").field("records", &self.len()).field("enclave", &self.enclave).finish()
    }
}

impl Middleware {
    /// Loads an existing store from `config.persist_path` if the file exists.
    pub fn open(config: MiddlewareConfig) -> Result<Self> {
        let (store, file) = match &config.persist_path {
            Some(path) => {
                let store = if path.exists() { RecordStore::load(path)? } else { RecordStore::new() };
                let file = OpenOptions::new().create(true).append(true).open(path)?;
                (store, Some(file))
            }
            None => (RecordStore::new(), None),
        };
        Ok(Self { store: RwLock::new(store), config, enclave: None, persist: Mutex::new(file) })
    }

    pub fn in_memory() -> Self {
        Self::open(MiddlewareConfig::default()).expect("no file access without a persist path")
    }

    pub fn with_enclave(mut self, enclave: Endpoint) -> Self {
        self.enclave = Some(enclave);
        self
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, RecordStore> {
        self.store.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, RecordStore> {
        self.store.write().unwrap_or_else(|p| p.into_inner())
    }

    /// Returns the store length after the append.
    pub fn ingest(&self, record: EncryptedRecord) -> Result<u64> {
        let stored = StoredRecord { record, ingested_at_ms: now_ms() };
        let mut store = self.write();
        if let Some(file) = self.persist.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
            writeln!(file, "{}", encode_line(&stored))?;
        }
        store.records.push(stored);
        Ok(store.len() as u64)
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.read().is_empty()
    }

    pub fn stats(&self) -> StatsMsg {
        self.read().stats()
    }

    pub fn dump_bytes(&self) -> Vec<u8> {
        self.read().dump_bytes()
    }

    pub fn snapshot(&self) -> RecordStore {
        self.read().clone()
    }

    /// Empties the store and truncates the persisted file.
    pub fn clear(&self) -> Result<()> {
        let mut store = self.write();
        if let Some(path) = &self.config.persist_path {
            File::create(path)?;
            let file = OpenOptions::new().append(true).open(path)?;
            *self.persist.lock().unwrap_or_else(|p| p.into_inner()) = Some(file);
        }
        store.clear();
        Ok(())
    }

    /// Forwards to the configured enclave endpoint.
    pub fn forward_all(&self) -> Result<ForwardAckMsg> {
        let endpoint = self.enclave.as_ref().ok_or_else(|| Error::Config("no enclave endpoint configured".into()))?;
        self.forward_to(endpoint)
    }

    /// Sends a snapshot of the store. Only the connection is retried: once a
    /// batch is in flight, a failure is reported rather than risking a
    /// duplicate delivery.
    pub fn forward_to(&self, endpoint: &Endpoint) -> Result<ForwardAckMsg> {
        let batches = chunk_records(self.read().snapshot(), self.config.max_batch_bytes);
        let mut rng = ChaCha20Rng::from_entropy();
        let attempts = self.config.connect_attempts.max(1);
        let mut conn = None;
        let mut last_err = None;
        for attempt in 0..attempts {
            match endpoint.connect(&mut rng) {
                Ok(c) => {
                    conn = Some(c);
                    break;
                }
                Err(e) => {
                    log::warn!("enclave connect attempt {} of {attempts} failed: {e}", attempt + 1);
                    last_err = Some(e);
                    if attempt + 1 < attempts {
                        thread::sleep(self.config.retry_backoff * (attempt + 1));
                    }
                }
            }
        }
        let mut conn = match conn {
            Some(c) => c,
            None => return Err(last_err.map(Error::Wire).unwrap_or_else(|| Error::Config("no attempts".into()))),
        };

        let mut out = ForwardAckMsg::default();
        for batch in batches {
            let Message::UploadAck(ack) = conn.call(&Message::DataBatch(batch), MessageKind::UploadAck)? else {
                unreachable!("call checks the kind")
            };
            out.batches += 1;
            out.ack.merge(&ack);
        }
        Ok(out)
    }
}

impl Service for Middleware {
    fn handle(&self, _ctx: &RequestContext, msg: Message) -> Message {
        let reply = match msg {
            Message::Ingest(rec) => self.ingest(rec).map(|stored| Message::IngestAck { stored }),
            Message::Forward => self.forward_all().map(Message::ForwardAck),
            Message::StatsRequest => Ok(Message::Stats(self.stats())),
            other => Err(Error::Wire(WireError::Remote(format!("middleware does not serve `{}`", other.kind())))),
        };
        reply.unwrap_or_else(|e| Message::error(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{random_iv, UserId};

    fn rec(user: &str, fill: u8, blocks: usize) -> EncryptedRecord {
        EncryptedRecord::new(UserId::new(user).unwrap(), [fill; 16], vec![fill; 16 * blocks]).unwrap()
    }

    #[test]
    fn ingest_keeps_order_and_duplicates() {
        let mw = Middleware::in_memory();
        let a = rec("u", 1, 1);
        assert_eq!(mw.ingest(a.clone()).unwrap(), 1);
        assert_eq!(mw.ingest(a.clone()).unwrap(), 2);
        let snap = mw.snapshot();
        assert_eq!(snap.records()[0].record, a);
        assert_eq!(snap.records()[1].record, a);
        let stats = mw.stats();
        assert_eq!((stats.records, stats.users, stats.total_bytes), (2, 1, 64));
    }

    #[test]
    fn chunking_respects_limit() {
        let records: Vec<_> = (0..10).map(|i| rec("u", i, 1)).collect();
        let chunks = chunk_records(records.clone(), 100);
        assert_eq!(chunks.len(), 4);
        assert!(chunks.iter().all(|c| c.raw_payload_bytes() <= 100));
        let flat: Vec<_> = chunks.into_iter().flat_map(|c| c.records).collect();
        assert_eq!(flat, records);

        assert_eq!(chunk_records(vec![rec("u", 0, 10)], 32).len(), 1);
        let empty = chunk_records(Vec::new(), 32);
        assert_eq!(empty.len(), 1);
        assert!(empty[0].records.is_empty());
    }

    #[test]
    fn persist_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl");
        let mut store = RecordStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for i in 0..5 {
            let r = EncryptedRecord::new(UserId::new(format!("u{i}")).unwrap(), random_iv(&mut rng), vec![i; 32]).unwrap();
            store.append(r, 1000 + i as u64);
        }
        store.persist(&path).unwrap();
        assert_eq!(RecordStore::load(&path).unwrap(), store);

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        lines[2] = "{\"kind\":\"data_batch\",\"records\":[{\"user_id\":\"x\"";
        std::fs::write(&path, lines.join("\n")).unwrap();
        match RecordStore::load(&path) {
            Err(Error::Persist { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }

        std::fs::write(&path, "").unwrap();
        assert!(RecordStore::load(&path).unwrap().is_empty());
    }

    #[test]
    fn reopened_middleware_recovers_store() {
        let dir = tempfile::tempdir().unwrap();
        let config = MiddlewareConfig { persist_path: Some(dir.path().join("s.jsonl")), ..Default::default() };
        let mw = Middleware::open(config.clone()).unwrap();
        mw.ingest(rec("a", 1, 1)).unwrap();
        mw.ingest(rec("b", 2, 2)).unwrap();
        let before = mw.snapshot();
        drop(mw);
        let mw = Middleware::open(config.clone()).unwrap();
        assert_eq!(mw.snapshot(), before);
        mw.clear().unwrap();
        mw.ingest(rec("c", 3, 1)).unwrap();
        drop(mw);
        assert_eq!(Middleware::open(config).unwrap().len(), 1);
    }

    #[test]
    fn forward_without_enclave_is_config_error() {
        let mw = Middleware::in_memory();
        assert!(matches!(mw.forward_all(), Err(Error::Config(_))));
        let ctx = RequestContext { channel_binding: [0; 32] };
        assert!(matches!(mw.handle(&ctx, Message::Trigger), Message::Error { .. }));
    }
}
