//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use teeagg::actors::{recipient_deploy, RecipientActor, UserActor};
use teeagg::aggregation::AggregationSpec;
use teeagg::attestation::Manufacturer;
use teeagg::crypto::{RecipientKeyPair, UserId};
use teeagg::enclave::{Enclave, EnclaveConfig};
use teeagg::middleware::Middleware;
use teeagg::wire::Endpoint;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// A deployed enclave whose middleware holds one authorized record per
/// payload.
pub struct Pipeline {
    pub recipient: RecipientActor,
    pub enclave: Arc<Enclave>,
    pub enclave_ep: Endpoint,
    pub middleware: Arc<Middleware>,
}

impl Pipeline {
    pub fn new(spec: AggregationSpec, payloads: &[String], keys: RecipientKeyPair) -> Self {
        let mut rng = rng(7);
        let manufacturer = Manufacturer::default();
        let (recipient, enclave, published) =
            recipient_deploy(&mut rng, spec, keys, &manufacturer, EnclaveConfig::default()).expect("deploy");
        let enclave = Arc::new(enclave);
        let enclave_ep = Endpoint::local(enclave.clone());
        let middleware = Arc::new(Middleware::in_memory());
        let middleware_ep = Endpoint::local(middleware.clone());
        for (i, p) in payloads.iter().enumerate() {
            let id = UserId::new(format!("user-{i}")).expect("valid id");
            let mut user = UserActor::generate(&mut rng, id, &published, manufacturer.root_key(), middleware_ep.clone())
                .expect("user");
            assert!(user.authorize(&mut rng, &enclave_ep).expect("authorize").is_authorized());
            middleware.ingest(user.encrypt(&mut rng, p.as_bytes()).expect("encrypt")).expect("ingest");
        }
        Self { recipient, enclave, enclave_ep, middleware }
    }
}
