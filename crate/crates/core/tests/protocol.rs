mod common;

use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use common::{key_was_sent, recipient_keys, Relay, Replayer, World};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use teeagg::aggregation::evaluate;
use teeagg::attestation::TeeSigner;
use teeagg::benchmark::{generate_workload, DataParams, Function, AGREEMENT_REL_TOL};
use teeagg::wire::{spawn_tcp_server, ServerStaticKey};
use teeagg::{
    recipient_deploy, AggregateOutput, AggregationSpec, Authorization, Enclave, EnclaveConfig, Endpoint,
    Manufacturer, Message, Middleware, PublishedIdentity, RejectReason, UserActor, UserId,
};

#[test]
fn every_function_matches_direct_evaluation() {
    for function in Function::ALL {
        let workload = generate_workload(function, 40, &DataParams::default(), 3).unwrap();
        let mut w = World::new(workload.spec.clone(), 100 + function as u64);
        for (i, payload) in workload.payloads.iter().enumerate() {
            let mut u = w.user(&format!("u{i}"));
            u.submit(&mut w.rng, payload.as_bytes()).unwrap();
            assert!(u.authorize(&mut w.rng, &w.enclave_ep).unwrap().is_authorized());
        }
        let ack = w.mw.forward_all().unwrap();
        assert_eq!(ack.ack.accepted, 40);
        let got = w.recipient.collect(&mut w.rng, &w.enclave_ep).unwrap();
        let direct = evaluate(&workload.spec, workload.payloads.iter().map(|p| p.as_bytes())).output.unwrap();
        assert!(got.output.approx_eq(&direct, AGREEMENT_REL_TOL), "{function:?}: {:?} vs {direct:?}", got.output);
        assert_eq!((got.included_user_count, got.record_count), (40, 40));
    }
}

#[test]
fn only_authorized_users_are_counted_and_the_key_moves_only_after_attestation() {
    let mut w = World::new(AggregationSpec::Sum, 1);
    let mut total = 0;
    for i in 0..6 {
        let mut u = w.user(&format!("u{i}"));
        u.submit(&mut w.rng, format!("{}", i * 10).as_bytes()).unwrap();
        if i % 2 == 0 {
            let mut conn = w.enclave_ep.connect(&mut w.rng).unwrap();
            conn.record_transcript();
            assert_eq!(u.authorize_over(&mut w.rng, &mut conn).unwrap(), Authorization::Authorized);
            let sent: Vec<_> = conn.transcript().iter().filter(|e| e.direction == teeagg::wire::Direction::Sent).collect();
            assert_eq!(sent.len(), 2, "challenge then key");
            assert!(!key_was_sent(&conn.transcript()[..1], u.data_key()));
            assert!(key_was_sent(conn.transcript(), u.data_key()));
            total += i * 10;
        }
    }
    let ack = w.mw.forward_all().unwrap();
    assert_eq!((ack.ack.accepted, ack.ack.skipped_no_key, ack.ack.failed_decrypt), (3, 3, 0));
    let got = w.recipient.collect(&mut w.rng, &w.enclave_ep).unwrap();
    assert_eq!(got.output, AggregateOutput::Sum(total));
    assert_eq!(got.included_user_count, 3);
}

fn refused_without_key(w: &mut World, enclave_ep: &Endpoint, expected: RejectReason) {
    let mut u = w.user("victim");
    let mut conn = enclave_ep.connect(&mut w.rng).unwrap();
    conn.record_transcript();
    assert_eq!(u.authorize_over(&mut w.rng, &mut conn).unwrap(), Authorization::Refused(expected));
    assert!(!key_was_sent(conn.transcript(), u.data_key()));
    assert!(!u.is_authorized());
}

#[test]
fn self_certified_tee_is_refused() {
    let mut w = World::new(AggregationSpec::Sum, 2);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let rogue = Enclave::with_signer(
        AggregationSpec::Sum,
        recipient_keys(0).public_key,
        TeeSigner::self_certified(&mut rng),
        EnclaveConfig::default(),
        ChaCha20Rng::seed_from_u64(10),
    )
    .unwrap();
    let rogue = Arc::new(rogue);
    let ep = Endpoint::local(rogue.clone());
    refused_without_key(&mut w, &ep, RejectReason::ChainInvalid);
    assert_eq!(rogue.key_count(), 0);
}

#[test]
fn enclave_for_another_recipient_is_refused() {
    let mut w = World::new(AggregationSpec::Sum, 3);
    let swapped = Enclave::launch(
        AggregationSpec::Sum,
        recipient_keys(1).public_key,
        &Manufacturer::default(),
        EnclaveConfig::default(),
    )
    .unwrap();
    let swapped = Arc::new(swapped);
    let ep = Endpoint::local(swapped.clone());
    refused_without_key(&mut w, &ep, RejectReason::MeasurementMismatch);
    assert_eq!(swapped.key_count(), 0);
}

#[test]
fn enclave_with_another_function_is_refused() {
    let mut w = World::new(AggregationSpec::Sum, 4);
    let other = AggregationSpec::Histogram { min: 0.0, max: 10.0, bins: 2 };
    let e = Enclave::launch(other, recipient_keys(0).public_key, &Manufacturer::default(), EnclaveConfig::default())
        .unwrap();
    refused_without_key(&mut w, &Endpoint::local(Arc::new(e)), RejectReason::MeasurementMismatch);
}

#[test]
fn relayed_quote_fails_channel_binding() {
    let mut w = World::new(AggregationSpec::Sum, 5);
    let relay = Endpoint::local(Arc::new(Relay { upstream: w.enclave_ep.clone() }));
    refused_without_key(&mut w, &relay, RejectReason::BindingMismatch);
    assert_eq!(w.enclave.key_count(), 0);
}

#[test]
fn replayed_quote_fails_nonce_check() {
    let mut w = World::new(AggregationSpec::Sum, 6);
    let replayer = Endpoint::local(Arc::new(Replayer { enclave: w.enclave.clone(), first: Mutex::new(None) }));
    let mut conn = replayer.connect(&mut w.rng).unwrap();
    let mut first = w.user("first");
    assert!(first.authorize_over(&mut w.rng, &mut conn).unwrap().is_authorized());

    let mut second = w.user("second");
    conn.record_transcript();
    assert_eq!(
        second.authorize_over(&mut w.rng, &mut conn).unwrap(),
        Authorization::Refused(RejectReason::NonceMismatch)
    );
    assert!(!key_was_sent(conn.transcript(), second.data_key()));
    assert!(!w.enclave.has_key_for(second.user_id()));
}

#[test]
fn forwarding_twice_counts_records_twice() {
    let mut w = World::new(AggregationSpec::Sum, 7);
    let mut u = w.user("a");
    u.submit(&mut w.rng, b"21").unwrap();
    u.authorize(&mut w.rng, &w.enclave_ep).unwrap();
    w.mw.forward_all().unwrap();
    w.mw.forward_all().unwrap();
    let got = w.recipient.collect(&mut w.rng, &w.enclave_ep).unwrap();
    assert_eq!(got.output, AggregateOutput::Sum(42));
    assert_eq!((got.included_user_count, got.record_count), (1, 2));
}

#[test]
fn wrong_recipient_key_cannot_open() {
    let mut w = World::new(AggregationSpec::Sum, 8);
    let mut u = w.user("a");
    u.submit(&mut w.rng, b"5").unwrap();
    u.authorize(&mut w.rng, &w.enclave_ep).unwrap();
    w.mw.forward_all().unwrap();
    let sealed = w.recipient.trigger(&mut w.rng, &w.enclave_ep).unwrap();
    let other = teeagg::RecipientActor::new(
        recipient_keys(1),
        PublishedIdentity::new(&AggregationSpec::Sum, &recipient_keys(1).public_key),
        Manufacturer::default().root_key(),
    )
    .unwrap();
    assert!(matches!(other.open(&sealed), Err(teeagg::Error::Integrity)));
    assert_eq!(w.recipient.open(&sealed).unwrap(), AggregateOutput::Sum(5));
}

#[test]
fn protocol_over_tcp() {
    let mut rng = ChaCha20Rng::seed_from_u64(12);
    let spec = AggregationSpec::Histogram { min: 0.0, max: 10.0, bins: 5 };
    let (recipient, enclave, published) =
        recipient_deploy(&mut rng, spec, recipient_keys(0), &Manufacturer::default(), EnclaveConfig::default())
            .unwrap();
    let enclave_ep = spawn_tcp_server(
        TcpListener::bind("127.0.0.1:0").unwrap(),
        Arc::new(enclave),
        Arc::new(ServerStaticKey::generate(&mut rng)),
    )
    .unwrap();
    let Endpoint::Tcp { addr, .. } = enclave_ep else { unreachable!() };
    // users reach the enclave without a pin and rely on the quote
    let enclave_ep = Endpoint::Tcp { addr, pin: None };
    let mw = Middleware::in_memory().with_enclave(enclave_ep.clone());
    let mw_ep = spawn_tcp_server(
        TcpListener::bind("127.0.0.1:0").unwrap(),
        Arc::new(mw),
        Arc::new(ServerStaticKey::generate(&mut rng)),
    )
    .unwrap();

    let root = Manufacturer::default().root_key();
    for (i, v) in ["1", "3", "3.5", "9.9", "12"].iter().enumerate() {
        let mut u = UserActor::generate(&mut rng, UserId::new(format!("t{i}")).unwrap(), &published, root, mw_ep.clone())
            .unwrap();
        u.submit(&mut rng, v.as_bytes()).unwrap();
        assert!(u.authorize(&mut rng, &enclave_ep).unwrap().is_authorized());
    }
    let mut conn = mw_ep.connect(&mut rng).unwrap();
    let Message::ForwardAck(ack) = conn.call(&Message::Forward, teeagg::MessageKind::ForwardAck).unwrap() else {
        unreachable!()
    };
    assert_eq!(ack.ack.accepted, 5);
    let got = recipient.collect(&mut rng, &enclave_ep).unwrap();
    assert_eq!(got.output, AggregateOutput::Histogram(vec![1, 2, 0, 0, 1]));
}

#[test]
fn measurement_commits_to_function_and_model() {
    let keys = recipient_keys(0);
    let sum = PublishedIdentity::new(&AggregationSpec::Sum, &keys.public_key);
    let lsf = PublishedIdentity::new(&AggregationSpec::Lsf, &keys.public_key);
    assert_ne!(sum.measurement().unwrap(), lsf.measurement().unwrap());
    let svm = generate_workload(Function::Svm, 1, &DataParams::default(), 1).unwrap().spec;
    let svm = PublishedIdentity::new(&svm, &keys.public_key);
    assert_ne!(svm.identity().unwrap().model_digest, [0; 32]);
    assert_eq!(sum.identity().unwrap().model_digest, [0; 32]);
    let reloaded = PublishedIdentity::from_json(&svm.to_json()).unwrap();
    assert_eq!(reloaded.measurement().unwrap(), svm.measurement().unwrap());
}
