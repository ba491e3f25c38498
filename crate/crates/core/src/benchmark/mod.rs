//! Enclave-versus-plaintext latency comparison.
//!
//! Each function runs twice over the same generated data: once through the
//! full pipeline (middleware forwards ciphertext, recipient triggers and
//! opens) and once against [`PlainService`]. Per iteration one upload and one
//! compute request are timed on the client with a monotonic clock, each on a
//! fresh connection. Key release, data generation and encryption happen
//! beforehand and are not timed.

mod plain;
mod report;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{CryptoRng, Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use plain::PlainService;
pub use report::{geometric_mean, sample_stddev, BenchmarkReport, Mode, ReportError, ReportRow};

use crate::actors::{recipient_deploy, UserActor};
use crate::aggregation::{AggregateOutput, AggregationError, AggregationSpec, SvmModel};
use crate::attestation::Manufacturer;
use crate::crypto::{RecipientKeyPair, UserId};
use crate::enclave::EnclaveConfig;
use crate::error::{Error, Result};
use crate::middleware::Middleware;
use crate::wire::{Endpoint, Message, MessageKind};

/// Relative tolerance for real-valued cross-mode agreement.
pub const AGREEMENT_REL_TOL: f64 = 1e-9;

const BUNDLED_MODEL: &str = include_str!("../../data/breast_cancer_rbf.model");
const BUNDLED_DATASET: &str = include_str!("../../data/breast_cancer_scaled.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Function {
    Sum,
    Svm,
    Lsf,
    Histogram,
}

impl Function {
    pub const ALL: [Function; 4] = [Function::Sum, Function::Svm, Function::Lsf, Function::Histogram];

    pub fn name(self) -> &'static str {
        match self {
            Function::Sum => "sum",
            Function::Svm => "svm",
            Function::Lsf => "lsf",
            Function::Histogram => "histogram",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

impl std::fmt::Display for Function {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataParams {
    /// Sum inputs are uniform integers in `[0, sum_max]`.
    pub sum_max: i64,
    /// Histogram inputs are uniform reals in `[histogram_min, histogram_max)`.
    pub histogram_min: f64,
    pub histogram_max: f64,
    pub histogram_bins: u32,
    /// LSF points follow `y = slope * x + intercept + N(0, noise_sigma)` with
    /// `x` uniform in `[x_min, x_max)`.
    pub lsf_slope: f64,
    pub lsf_intercept: f64,
    pub lsf_x_min: f64,
    pub lsf_x_max: f64,
    pub lsf_noise_sigma: f64,
    /// libsvm model file; the bundled breast-cancer model when unset.
    pub svm_model: Option<PathBuf>,
    /// `label idx:val ...` rows resampled for SVM inputs; bundled when unset.
    pub svm_dataset: Option<PathBuf>,
}

impl Default for DataParams {
    fn default() -> Self {
        Self {
            sum_max: 1_000_000,
            histogram_min: 0.0,
            histogram_max: 100.0,
            histogram_bins: 10,
            lsf_slope: 2.0,
            lsf_intercept: 1.0,
            lsf_x_min: 0.0,
            lsf_x_max: 100.0,
            lsf_noise_sigma: 1.0,
            svm_model: None,
            svm_dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_users: usize,
    pub iterations: usize,
    pub functions: Vec<Function>,
    pub seed: u64,
    pub data: DataParams,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_users: 5000, iterations: 100, functions: Function::ALL.to_vec(), seed: 1, data: DataParams::default() }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.iterations == 0 || self.functions.is_empty() {
            return Err(Error::Config("n_users, iterations and functions must be non-empty".into()));
        }
        Ok(())
    }
}

pub fn bundled_svm_model() -> SvmModel {
    SvmModel::parse(BUNDLED_MODEL).expect("bundled model parses")
}

/// Feature columns of a `label idx:val ...` dataset.
pub fn dataset_features(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let l = l.trim();
            if l.is_empty() || l.starts_with('#') {
                return None;
            }
            Some(l.split_once(char::is_whitespace).map_or("", |(_, f)| f).trim().to_owned())
        })
        .collect()
}

pub fn bundled_svm_rows() -> Vec<String> {
    dataset_features(BUNDLED_DATASET)
}

/// One function's spec and its plaintext payloads, one per user.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub function: Function,
    pub spec: AggregationSpec,
    pub payloads: Vec<String>,
}

fn svm_inputs(params: &DataParams) -> Result<(SvmModel, Vec<String>)> {
    let model = match &params.svm_model {
        Some(p) => SvmModel::parse(&std::fs::read_to_string(p)?)?,
        None => bundled_svm_model(),
    };
    let rows = match &params.svm_dataset {
        Some(p) => dataset_features(&std::fs::read_to_string(p)?),
        None => bundled_svm_rows(),
    };
    if rows.is_empty() {
        return Err(Error::Config("svm dataset has no rows".into()));
    }
    Ok((model, rows))
}

/// Deterministic in `(seed, function)`; each function draws from its own
/// stream so adding a function does not change the others' data.
pub fn generate_workload(function: Function, n: usize, params: &DataParams, seed: u64) -> Result<Workload> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(function.stream());
    let (spec, payloads) = match function {
        Function::Sum => {
            let v = (0..n).map(|_| rng.gen_range(0..=params.sum_max).to_string()).collect();
            (AggregationSpec::Sum, v)
        }
        Function::Histogram => {
            let (min, max) = (params.histogram_min, params.histogram_max);
            let spec = AggregationSpec::Histogram { min, max, bins: params.histogram_bins };
            spec.validate()?;
            (spec, (0..n).map(|_| rng.gen_range(min..max).to_string()).collect())
        }
        Function::Lsf => {
            let noise = Normal::new(0.0, params.lsf_noise_sigma)
                .map_err(|e| Error::Config(format!("lsf_noise_sigma: {e}")))?;
            let v = (0..n)
                .map(|_| {
                    let x = rng.gen_range(params.lsf_x_min..params.lsf_x_max);
                    let y = params.lsf_slope * x + params.lsf_intercept + noise.sample(&mut rng);
                    format!("{x},{y}")
                })
                .collect();
            (AggregationSpec::Lsf, v)
        }
        Function::Svm => {
            let (model, rows) = svm_inputs(params)?;
            let v = (0..n).map(|_| rows[rng.gen_range(0..rows.len())].clone()).collect();
            (AggregationSpec::SvmClassify { model: Arc::new(model) }, v)
        }
    };
    Ok(Workload { function, spec, payloads })
}

pub fn generate_workloads(config: &BenchConfig) -> Result<Vec<Workload>> {
    config.functions.iter().map(|&f| generate_workload(f, config.n_users, &config.data, config.seed)).collect()
}

/// An aggregate as each mode returned it. A failed aggregation is an outcome
/// too, and both modes must fail the same way.
pub type ModeOutput = std::result::Result<AggregateOutput, AggregationError>;

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionOutcome {
    pub function: Function,
    pub enclave: ModeOutput,
    pub plain: ModeOutput,
}

impl FunctionOutcome {
    pub fn agrees(&self) -> bool {
        match (&self.enclave, &self.plain) {
            (Ok(a), Ok(b)) => a.approx_eq(b, AGREEMENT_REL_TOL),
            (Err(a), Err(b)) => a == b,
            _ => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkOutcome {
    pub report: BenchmarkReport,
    pub outcomes: Vec<FunctionOutcome>,
}

fn split_aggregation_error(r: Result<AggregateOutput>) -> Result<ModeOutput> {
    match r {
        Ok(out) => Ok(Ok(out)),
        Err(Error::Aggregation(e)) => Ok(Err(e)),
        Err(e) => Err(e),
    }
}

fn fail(function: Function, mode: Mode, iteration: usize, what: impl std::fmt::Display) -> Error {
    Error::Benchmark(format!("{function}/{mode} iteration {iteration}: {what}"))
}

fn run_enclave<R: RngCore + CryptoRng>(
    rng: &mut R,
    keys: &RecipientKeyPair,
    workload: &Workload,
    iterations: usize,
) -> Result<(ReportRow, ModeOutput)> {
    let f = workload.function;
    let manufacturer = Manufacturer::default();
    let (recipient, enclave, published) =
        recipient_deploy(rng, workload.spec.clone(), keys.clone(), &manufacturer, EnclaveConfig::default())?;
    let enclave = Arc::new(enclave);
    let enclave_ep = Endpoint::local(enclave.clone());
    let middleware = Arc::new(Middleware::in_memory());
    let middleware_ep = Endpoint::local(middleware.clone());

    for (i, payload) in workload.payloads.iter().enumerate() {
        let id = UserId::new(format!("user-{i:05}"))?;
        let mut user = UserActor::generate(rng, id, &published, manufacturer.root_key(), middleware_ep.clone())?;
        if !user.authorize(rng, &enclave_ep)?.is_authorized() {
            return Err(fail(f, Mode::Enclave, 0, "user refused a correctly deployed enclave"));
        }
        middleware.ingest(user.encrypt(rng, payload.as_bytes())?)?;
    }

    let n = workload.payloads.len() as u64;
    let (mut uploads, mut computes) = (Vec::with_capacity(iterations), Vec::with_capacity(iterations));
    let mut last = None;
    for it in 0..iterations {
        enclave.clear_records();
        let start = Instant::now();
        let forwarded = middleware.forward_to(&enclave_ep)?;
        uploads.push(start.elapsed());
        if forwarded.ack.accepted != n {
            return Err(fail(f, Mode::Enclave, it, format!("accepted {} of {n} records", forwarded.ack.accepted)));
        }

        let start = Instant::now();
        let result = recipient.trigger(rng, &enclave_ep)?;
        let opened = split_aggregation_error(recipient.open(&result))?;
        computes.push(start.elapsed());
        if result.record_count != n {
            return Err(fail(f, Mode::Enclave, it, format!("aggregate covers {} of {n} records", result.record_count)));
        }
        last = Some(opened);
    }
    let row = ReportRow::from_samples(f, Mode::Enclave, &uploads, &computes);
    Ok((row, last.expect("iterations > 0")))
}

fn run_plain<R: RngCore + CryptoRng>(rng: &mut R, workload: &Workload, iterations: usize) -> Result<(ReportRow, ModeOutput)> {
    let f = workload.function;
    let service = Arc::new(PlainService::new(workload.spec.clone()));
    let endpoint = Endpoint::local(service.clone());
    let batch = Message::PlainBatch { payloads: workload.payloads.clone() };
    let n = workload.payloads.len() as u64;

    let (mut uploads, mut computes) = (Vec::with_capacity(iterations), Vec::with_capacity(iterations));
    let mut last = None;
    for it in 0..iterations {
        service.clear();
        let start = Instant::now();
        let mut conn = endpoint.connect(rng)?;
        let ack = conn.call(&batch, MessageKind::PlainAck)?;
        uploads.push(start.elapsed());
        if ack != (Message::PlainAck { accepted: n }) {
            return Err(fail(f, Mode::Plain, it, format!("unexpected ack {ack:?}")));
        }

        let start = Instant::now();
        let mut conn = endpoint.connect(rng)?;
        let Message::PlainResult { result } = conn.call(&Message::Trigger, MessageKind::PlainResult)? else {
            unreachable!("call checks the kind")
        };
        let parsed = AggregateOutput::from_text(&workload.spec, &result);
        computes.push(start.elapsed());
        last = Some(parsed);
    }
    let row = ReportRow::from_samples(f, Mode::Plain, &uploads, &computes);
    Ok((row, last.expect("iterations > 0")))
}

/// Runs every configured function in both modes. Any failed iteration or
/// cross-mode disagreement aborts the run.
pub fn run_benchmark(config: &BenchConfig) -> Result<BenchmarkOutcome> {
    config.validate()?;
    let workloads = generate_workloads(config)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let keys = RecipientKeyPair::generate(&mut rng)?;

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for workload in &workloads {
        log::info!("benchmarking {} with {} users", workload.function, workload.payloads.len());
        let (enclave_row, enclave) = run_enclave(&mut rng, &keys, workload, config.iterations)?;
        let (plain_row, plain) = run_plain(&mut rng, workload, config.iterations)?;
        let outcome = FunctionOutcome { function: workload.function, enclave, plain };
        if !outcome.agrees() {
            return Err(Error::Benchmark(format!(
                "{}: enclave {:?} disagrees with plain {:?}",
                workload.function, outcome.enclave, outcome.plain
            )));
        }
        if let Err(e) = &outcome.enclave {
            log::warn!("{}: aggregation failed in both modes: {e}", workload.function);
        }
        rows.push(enclave_row);
        rows.push(plain_row);
        outcomes.push(outcome);
    }
    let report = BenchmarkReport::from_rows(rows).map_err(|e| Error::Benchmark(e.to_string()))?;
    Ok(BenchmarkOutcome { report, outcomes })
}

/// Mean of `d` in milliseconds.
pub fn mean_ms(d: &[Duration]) -> f64 {
    d.iter().map(|x| x.as_secs_f64() * 1e3).sum::<f64>() / d.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded_and_in_range() {
        let p = DataParams::default();
        for f in Function::ALL {
            let a = generate_workload(f, 200, &p, 5).unwrap();
            let b = generate_workload(f, 200, &p, 5).unwrap();
            let c = generate_workload(f, 200, &p, 6).unwrap();
            assert_eq!(a, b);
            assert_ne!(a.payloads, c.payloads, "{f}");
        }
        let sums = generate_workload(Function::Sum, 1000, &p, 1).unwrap();
        assert!(sums.payloads.iter().all(|s| (0..=1_000_000).contains(&s.parse::<i64>().unwrap())));
        let hist = generate_workload(Function::Histogram, 1000, &p, 1).unwrap();
        assert!(hist.payloads.iter().all(|s| (0.0..100.0).contains(&s.parse::<f64>().unwrap())));
    }

    #[test]
    fn svm_rows_come_from_dataset() {
        let rows = bundled_svm_rows();
        assert_eq!(rows.len(), 569);
        let w = generate_workload(Function::Svm, 50, &DataParams::default(), 3).unwrap();
        assert!(w.payloads.iter().all(|p| rows.contains(p)));
    }

    #[test]
    fn config_from_toml() {
        let cfg: BenchConfig = toml::from_str("n_users = 10\nfunctions = [\"sum\", \"lsf\"]\n[data]\nsum_max = 9\n")
            .expect("toml parses");
        assert_eq!(cfg.n_users, 10);
        assert_eq!(cfg.iterations, 100);
        assert_eq!(cfg.functions, vec![Function::Sum, Function::Lsf]);
        assert_eq!(cfg.data.sum_max, 9);
    }

    #[test]
    fn tiny_run_is_well_formed() {
        let cfg = BenchConfig { n_users: 1, iterations: 1, ..Default::default() };
        let out = run_benchmark(&cfg).unwrap();
        assert_eq!(out.report.rows().len(), 8);
        assert!(out.report.rows().iter().all(|r| r.total_ms > 0.0));
        assert!(out.outcomes.iter().all(FunctionOutcome::agrees));
        let lsf = out.outcomes.iter().find(|o| o.function == Function::Lsf).unwrap();
        assert!(matches!(lsf.enclave, Err(AggregationError::Reported(_))));
    }
}
