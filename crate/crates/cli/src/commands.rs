use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::rngs::OsRng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use teeagg::actors::{RecipientActor, UserActor};
use teeagg::aggregation::{AggregationSpec, SvmModel};
use teeagg::attestation::Manufacturer;
use teeagg::benchmark::run_benchmark;
use teeagg::crypto::{DataKey, RecipientKeyPair, RecipientPrivateKey, UserId};
use teeagg::enclave::{Enclave, EnclaveConfig, PublishedIdentity};
use teeagg::middleware::{Middleware, MiddlewareConfig};
use teeagg::taxi::{authorize_fleet, init_city, render_views, run_distribution, run_scaling, step, TaxiSystem};
use teeagg::wire::{decode, encode, serve, Message, MessageKind, ServerStaticKey};
use teeagg::Authorization;

use crate::config::{parse_key_hex, Config};
use crate::{MiddlewareCmd, RecipientCmd, TaxiRunArgs, UserCmd};

#[derive(Serialize, Deserialize)]
struct UserKeyFile {
    user_id: String,
    key_b64: String,
}

fn load_published(cfg: &Config) -> Result<PublishedIdentity> {
    let path = cfg.identity_path()?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(PublishedIdentity::from_json(&text)?)
}

fn load_user(cfg: &Config, key: &Path) -> Result<UserActor> {
    let file: UserKeyFile = serde_json::from_str(&fs::read_to_string(key)?).context("parsing key file")?;
    let data_key = DataKey::from_slice(&B64.decode(&file.key_b64).context("key_b64")?)?;
    let published = load_published(cfg)?;
    let root = Manufacturer::default().root_key();
    Ok(UserActor::new(UserId::new(file.user_id)?, data_key, &published, root, cfg.middleware_endpoint()?)?)
}

pub fn user(cfg: &Config, cmd: UserCmd) -> Result<()> {
    match cmd {
        UserCmd::Keygen { id, out } => {
            let id = UserId::new(id)?;
            let key = DataKey::generate(&mut OsRng);
            let file = UserKeyFile { user_id: id.to_string(), key_b64: B64.encode(key.as_bytes()) };
            fs::write(&out, serde_json::to_string_pretty(&file)?)?;
            println!("wrote key for {id} to {}", out.display());
        }
        UserCmd::Submit { key, payload } => {
            let user = load_user(cfg, &key)?;
            let stored = user.submit(&mut OsRng, payload.as_bytes())?;
            println!("submitted; middleware holds {stored} records");
        }
        UserCmd::Authorize { key } => {
            let mut user = load_user(cfg, &key)?;
            match user.authorize(&mut OsRng, &cfg.enclave_endpoint()?)? {
                Authorization::Authorized => println!("authorized: key released to enclave {}", user.expected_measurement()),
                Authorization::Refused(reason) => bail!("refused: {reason}; key not sent"),
            }
        }
    }
    Ok(())
}

fn load_recipient(cfg: &Config, private_key: &Path) -> Result<RecipientActor> {
    let private_key = RecipientPrivateKey::from_pkcs8_pem(&fs::read_to_string(private_key)?)?;
    let keys = RecipientKeyPair { public_key: private_key.public_key(), private_key };
    Ok(RecipientActor::new(keys, load_published(cfg)?, Manufacturer::default().root_key())?)
}

pub fn recipient(cfg: &Config, cmd: RecipientCmd) -> Result<()> {
    match cmd {
        RecipientCmd::Deploy { spec, model, out_dir } => {
            let model = model.map(|p| -> Result<SvmModel> { Ok(SvmModel::parse(&fs::read_to_string(p)?)?) }).transpose()?;
            let spec = AggregationSpec::parse(&spec, model)?;
            let keys = RecipientKeyPair::generate(&mut OsRng)?;
            let published = PublishedIdentity::new(&spec, &keys.public_key);
            fs::create_dir_all(&out_dir)?;
            fs::write(out_dir.join("recipient_private.pem"), keys.private_key.to_pkcs8_pem())?;
            fs::write(out_dir.join("recipient_public.pem"), keys.public_key.to_pem())?;
            fs::write(out_dir.join("identity.json"), published.to_json())?;
            println!("published identity for `{}`, measurement {}", published.spec, published.measurement()?);
        }
        RecipientCmd::Trigger { private_key, out } => {
            let recipient = load_recipient(cfg, &private_key)?;
            let result = recipient.trigger(&mut OsRng, &cfg.enclave_endpoint()?)?;
            println!("sealed result covers {} users, {} records", result.included_user_count, result.record_count);
            fs::write(&out, encode(&Message::Result(result)))?;
        }
        RecipientCmd::Open { private_key, result } => {
            let recipient = load_recipient(cfg, &private_key)?;
            let Message::Result(result) = decode(&fs::read(&result)?, MessageKind::Result)? else {
                unreachable!("decode checks the kind")
            };
            println!("{}", recipient.open(&result)?.to_text());
        }
    }
    Ok(())
}

fn middleware_static_key(path: Option<&Path>) -> Result<ServerStaticKey> {
    let Some(path) = path else { return Ok(ServerStaticKey::generate(&mut OsRng)) };
    if path.exists() {
        return Ok(ServerStaticKey::from_bytes(parse_key_hex(&fs::read_to_string(path)?)?));
    }
    let mut bytes = [0u8; 32];
    rand::RngCore::fill_bytes(&mut OsRng, &mut bytes);
    fs::write(path, hex::encode(bytes))?;
    Ok(ServerStaticKey::from_bytes(bytes))
}

pub fn middleware(cfg: &Config, cmd: MiddlewareCmd) -> Result<()> {
    match cmd {
        MiddlewareCmd::Serve => {
            let section = &cfg.middleware;
            let config = MiddlewareConfig {
                max_batch_bytes: section.max_batch_bytes,
                persist_path: section.store.clone(),
                ..Default::default()
            };
            let mut mw = Middleware::open(config)?;
            if cfg.endpoints.enclave.is_some() {
                mw = mw.with_enclave(cfg.enclave_endpoint()?);
            }
            let key = middleware_static_key(section.key_file.as_deref())?;
            let listener = TcpListener::bind(section.listen)?;
            println!("middleware on {} with {} stored records, pin {}", listener.local_addr()?, mw.len(), hex::encode(key.public()));
            serve(listener, Arc::new(mw), Arc::new(key))?;
        }
        MiddlewareCmd::Forward => {
            let mut conn = cfg.middleware_endpoint()?.connect(&mut OsRng)?;
            let Message::ForwardAck(ack) = conn.call(&Message::Forward, MessageKind::ForwardAck)? else {
                unreachable!("call checks the kind")
            };
            println!(
                "forwarded in {} batches: accepted {}, skipped (no key) {}, failed decrypt {}",
                ack.batches, ack.ack.accepted, ack.ack.skipped_no_key, ack.ack.failed_decrypt
            );
        }
        MiddlewareCmd::Stats => {
            let mut conn = cfg.middleware_endpoint()?.connect(&mut OsRng)?;
            let Message::Stats(stats) = conn.call(&Message::StatsRequest, MessageKind::Stats)? else {
                unreachable!("call checks the kind")
            };
            println!("records {}, users {}, ciphertext bytes {}", stats.records, stats.users, stats.total_bytes);
            for (user, count) in &stats.per_user {
                println!("{user}\t{count}");
            }
        }
    }
    Ok(())
}

pub fn enclave_serve(cfg: &Config) -> Result<()> {
    let published = load_published(cfg)?;
    let enclave = Enclave::launch(
        published.aggregation_spec()?,
        published.recipient_key()?,
        &Manufacturer::default(),
        EnclaveConfig { max_batch_bytes: cfg.enclave.max_batch_bytes },
    )?;
    let listener = TcpListener::bind(cfg.enclave.listen)?;
    println!("enclave `{}` on {}, measurement {}", published.spec, listener.local_addr()?, enclave.measurement());
    serve(listener, Arc::new(enclave), Arc::new(ServerStaticKey::generate(&mut OsRng)))?;
    Ok(())
}

pub fn bench_run(cfg: &Config, out: &Path) -> Result<()> {
    let outcome = run_benchmark(&cfg.bench)?;
    let text = outcome.report.render_text();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out.with_extension("txt"), &text)?;
    fs::write(out.with_extension("csv"), outcome.report.render_csv())?;
    print!("{text}");
    Ok(())
}

pub fn taxi_run(cfg: &Config, args: &TaxiRunArgs) -> Result<()> {
    let city = &cfg.city;
    let mut rng = ChaCha20Rng::seed_from_u64(city.seed);
    let keys = RecipientKeyPair::generate(&mut rng)?;
    let mut taxis = init_city(&mut rng, city)?;
    let system = TaxiSystem::deploy(&mut rng, city, keys.clone())?;
    let refusing: BTreeSet<u32> = cfg.taxi.refusing_companies.iter().copied().collect();
    let authorized = authorize_fleet(&mut rng, &system, &taxis, &refusing)? as u64;
    println!("{authorized} of {} taxis authorized", taxis.len());

    fs::create_dir_all(&args.out)?;
    let mut rounds = String::from("round,upload_s,compute_s,included_taxis\n");
    let mut last = None;
    for round in 0..args.rounds {
        step(&mut rng, &mut taxis, city);
        let r = run_distribution(&mut rng, &system, &taxis)?;
        if r.distribution.total() != authorized {
            bail!("round {round}: zone total {} != {authorized} authorized taxis", r.distribution.total());
        }
        writeln!(rounds, "{round},{:.6},{:.6},{}", r.upload.as_secs_f64(), r.compute.as_secs_f64(), r.included_taxis)?;
        last = Some(r);
    }
    fs::write(args.out.join("rounds.csv"), rounds)?;
    if let Some(r) = last {
        let files = render_views(city, &taxis, &r.distribution, &args.out, args.debug_global)?;
        println!("views written to {}", files.public_csv.parent().unwrap_or(&args.out).display());
    }

    if args.scaling {
        let table = run_scaling(&mut rng, city, &cfg.taxi.scaling_sizes, cfg.taxi.scaling_iterations, &keys)?;
        fs::write(args.out.join("scaling.csv"), table.render_csv())?;
        let t = table.trend()?;
        println!(
            "upload fit R^2 {:.4}, compute max/min {:.3}",
            t.upload_fit.r_squared, t.compute_max_over_min
        );
    }
    Ok(())
}
