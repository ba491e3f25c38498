//! Plaintexts and data keys never reach the middleware or leave the enclave
//! outside the sealed result.

mod common;

use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use common::{contains, World};
use teeagg::middleware::{Middleware, MiddlewareConfig, RecordStore};
use teeagg::wire::{encode, Message, MessageKind};
use teeagg::{AggregateOutput, AggregationSpec, DataKey, Endpoint};

const SENTINELS: [&str; 4] = ["918273645", "564738291", "777000777", "123450987"];

fn secrets(keys: &[DataKey]) -> Vec<Vec<u8>> {
    let mut out: Vec<Vec<u8>> = SENTINELS.iter().map(|s| s.as_bytes().to_vec()).collect();
    for k in keys {
        out.push(k.as_bytes().to_vec());
        out.push(B64.encode(k.as_bytes()).into_bytes());
        out.push(hex::encode(k.as_bytes()).into_bytes());
    }
    out
}

fn assert_clean(label: &str, bytes: &[u8], secrets: &[Vec<u8>]) {
    for s in secrets {
        assert!(!contains(bytes, s), "{label} leaks {:?}", String::from_utf8_lossy(s));
    }
}

#[test]
fn middleware_and_enclave_replies_hold_no_secrets() {
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("store.jsonl");
    let mut w = World::new(AggregationSpec::Sum, 31);
    let mw = Arc::new(
        Middleware::open(MiddlewareConfig { persist_path: Some(store_path.clone()), ..Default::default() })
            .unwrap()
            .with_enclave(w.enclave_ep.clone()),
    );
    w.mw_ep = Endpoint::local(mw.clone());

    let mut keys = Vec::new();
    for (i, s) in SENTINELS.iter().enumerate() {
        let mut u = w.user(&format!("owner{i}"));
        u.submit(&mut w.rng, s.as_bytes()).unwrap();
        u.authorize(&mut w.rng, &w.enclave_ep).unwrap();
        keys.push(u.data_key().clone());
    }
    let secrets = secrets(&keys);

    assert_clean("middleware memory", &mw.dump_bytes(), &secrets);
    assert_clean("middleware file", &std::fs::read(&store_path).unwrap(), &secrets);
    assert_clean("reloaded store", &RecordStore::load(&store_path).unwrap().dump_bytes(), &secrets);
    assert_clean("stats", &serde_json::to_vec(&mw.stats()).unwrap(), &secrets);

    let mut conn = w.mw_ep.connect(&mut w.rng).unwrap();
    let fwd = conn.call(&Message::Forward, MessageKind::ForwardAck).unwrap();
    assert_clean("forward ack", &encode(&fwd), &secrets);

    let result = w.recipient.trigger(&mut w.rng, &w.enclave_ep).unwrap();
    assert_clean("result message", &encode(&Message::Result(result.clone())), &secrets);
    let expected: i64 = SENTINELS.iter().map(|s| s.parse::<i64>().unwrap()).sum();
    assert_clean("result message", &encode(&Message::Result(result.clone())), &[expected.to_string().into_bytes()]);
    assert_eq!(w.recipient.open(&result).unwrap(), AggregateOutput::Sum(expected));
}

#[test]
fn unauthorized_records_never_enter_enclave_state() {
    let mut w = World::new(AggregationSpec::Sum, 32);
    let u = w.user("silent");
    u.submit(&mut w.rng, SENTINELS[0].as_bytes()).unwrap();
    let ack = w.mw.forward_all().unwrap();
    assert_eq!(ack.ack.skipped_no_key, 1);
    assert_eq!(w.enclave.record_count(), 0);
    assert_eq!(w.recipient.collect(&mut w.rng, &w.enclave_ep).unwrap().record_count, 0);
}
