use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{CryptoRng, RngCore};

use super::{init_city, step, CityConfig, TaxiState};
use crate::actors::{recipient_deploy, submit_record, RecipientActor, UserActor};
use crate::aggregation::{agg_lsf, AggregateOutput, ZoneDistribution};
use crate::attestation::Manufacturer;
use crate::benchmark::sample_stddev;
use crate::crypto::{encrypt_record, random_iv, RecipientKeyPair, VerifyKey};
use crate::enclave::{Enclave, EnclaveConfig, PublishedIdentity};
use crate::error::{Error, Result};
use crate::middleware::Middleware;
use crate::wire::Endpoint;

pub const DEFAULT_SCALING_SIZES: [usize; 6] = [100, 1000, 2000, 3000, 4000, 5000];

/// One recipient, enclave and middleware wired together in-process.
pub struct TaxiSystem {
    pub recipient: RecipientActor,
    pub enclave: Arc<Enclave>,
    pub enclave_ep: Endpoint,
    pub middleware: Arc<Middleware>,
    pub middleware_ep: Endpoint,
    pub published: PublishedIdentity,
    pub manufacturer_root: VerifyKey,
    pub zones_per_side: u32,
}

impl TaxiSystem {
    pub fn deploy<R: RngCore + CryptoRng>(rng: &mut R, city: &CityConfig, keys: RecipientKeyPair) -> Result<Self> {
        city.validate()?;
        let manufacturer = Manufacturer::default();
        let (recipient, enclave, published) =
            recipient_deploy(rng, city.spec(), keys, &manufacturer, EnclaveConfig::default())?;
        let enclave = Arc::new(enclave);
        let enclave_ep = Endpoint::local(enclave.clone());
        let middleware = Arc::new(Middleware::in_memory());
        let middleware_ep = Endpoint::local(middleware.clone());
        Ok(Self {
            recipient,
            enclave,
            enclave_ep,
            middleware,
            middleware_ep,
            published,
            manufacturer_root: manufacturer.root_key(),
            zones_per_side: city.zones_per_side(),
        })
    }
}

/// Authorizes every taxi whose company is not in `refusing`. Returns how
/// many keys were released.
pub fn authorize_fleet<R: RngCore + CryptoRng>(
    rng: &mut R,
    system: &TaxiSystem,
    taxis: &[TaxiState],
    refusing: &BTreeSet<u32>,
) -> Result<usize> {
    let mut authorized = 0;
    for taxi in taxis.iter().filter(|t| !refusing.contains(&t.company)) {
        let mut user = UserActor::new(
            taxi.taxi_id.clone(),
            taxi.data_key.clone(),
            &system.published,
            system.manufacturer_root,
            system.middleware_ep.clone(),
        )?;
        if !user.authorize(rng, &system.enclave_ep)?.is_authorized() {
            return Err(Error::Config(format!("{} refused the deployed enclave", taxi.taxi_id)));
        }
        authorized += 1;
    }
    Ok(authorized)
}

/// Each taxi encrypts its position under its own key and ingests it on its
/// own connection. Returns the number of acknowledged ingests.
pub fn publish_positions<R: RngCore + CryptoRng>(rng: &mut R, taxis: &[TaxiState], middleware: &Endpoint) -> Result<u64> {
    let mut acked = 0;
    for taxi in taxis {
        let record = encrypt_record(&taxi.data_key, taxi.taxi_id.clone(), taxi.payload().as_bytes(), &random_iv(rng))?;
        let mut conn = middleware.connect(rng)?;
        submit_record(&mut conn, record)?;
        acked += 1;
    }
    Ok(acked)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub distribution: ZoneDistribution,
    /// Publishing to the middleware plus forwarding to the enclave.
    pub upload: Duration,
    /// Trigger, retrieval and opening of the sealed distribution.
    pub compute: Duration,
    pub included_taxis: u64,
}

/// One publish round over fresh middleware and enclave record stores. Keys
/// released earlier stay valid.
pub fn run_distribution<R: RngCore + CryptoRng>(rng: &mut R, system: &TaxiSystem, taxis: &[TaxiState]) -> Result<RoundResult> {
    system.middleware.clear()?;
    system.enclave.clear_records();

    let start = Instant::now();
    publish_positions(rng, taxis, &system.middleware_ep)?;
    system.middleware.forward_to(&system.enclave_ep)?;
    let upload = start.elapsed();

    let start = Instant::now();
    let collected = system.recipient.collect(rng, &system.enclave_ep)?;
    let compute = start.elapsed();

    let AggregateOutput::Zones(counts) = collected.output else {
        return Err(Error::Config("zone spec produced a non-zone aggregate".into()));
    };
    let distribution = ZoneDistribution { zones_per_side: system.zones_per_side, counts, out_of_bounds: 0 };
    Ok(RoundResult { distribution, upload, compute, included_taxis: collected.included_user_count })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

pub fn linear_fit(points: &[(f64, f64)]) -> Result<LinearFit> {
    let fit = agg_lsf(points)?;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = points.iter().map(|p| (p.1 - fit.c0 - fit.c1 * p.0).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit { intercept: fit.c0, slope: fit.c1, r_squared })
}

/// Shape of a scaling table: how linear upload time is in fleet size, and
/// how much compute time varies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trend {
    pub upload_fit: LinearFit,
    pub compute_max_over_min: f64,
}

pub fn trend(sizes: &[usize], upload_means: &[f64], compute_means: &[f64]) -> Result<Trend> {
    if sizes.len() != upload_means.len() || sizes.len() != compute_means.len() {
        return Err(Error::Config("trend inputs differ in length".into()));
    }
    let points: Vec<(f64, f64)> = sizes.iter().zip(upload_means).map(|(&n, &u)| (n as f64, u)).collect();
    let upload_fit = linear_fit(&points)?;
    let max = compute_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = compute_means.iter().copied().fold(f64::INFINITY, f64::min);
    if min.is_nan() || min <= 0.0 {
        return Err(Error::Config("compute means must be positive".into()));
    }
    Ok(Trend { upload_fit, compute_max_over_min: max / min })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub n_taxis: usize,
    pub iterations: usize,
    pub upload_mean_s: f64,
    pub compute_mean_s: f64,
    pub total_s: f64,
    /// Over per-iteration totals.
    pub stddev_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
}

impl ScalingTable {
    pub fn trend(&self) -> Result<Trend> {
        let sizes: Vec<usize> = self.rows.iter().map(|r| r.n_taxis).collect();
        let up: Vec<f64> = self.rows.iter().map(|r| r.upload_mean_s).collect();
        let comp: Vec<f64> = self.rows.iter().map(|r| r.compute_mean_s).collect();
        trend(&sizes, &up, &comp)
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("taxis,upload_mean_s,compute_mean_s,total_s,stddev_s\n");
        for r in &self.rows {
            writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", r.n_taxis, r.upload_mean_s, r.compute_mean_s, r.total_s, r.stddev_s)
                .unwrap();
        }
        if let Ok(t) = self.trend() {
            writeln!(out, "# upload_r_squared={:.6} compute_max_over_min={:.6}", t.upload_fit.r_squared, t.compute_max_over_min)
                .unwrap();
        }
        out
    }
}

/// For each size a fresh city and deployment, all taxis authorized once
/// (untimed), then `iterations` timed rounds with a step between rounds.
/// Fails if any round's zone total differs from the number of authorized
/// taxis.
pub fn run_scaling<R: RngCore + CryptoRng>(
    rng: &mut R,
    city: &CityConfig,
    sizes: &[usize],
    iterations: usize,
    keys: &RecipientKeyPair,
) -> Result<ScalingTable> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be positive".into()));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let cfg = CityConfig { n_taxis: n, ..city.clone() };
        let mut taxis = init_city(rng, &cfg)?;
        let system = TaxiSystem::deploy(rng, &cfg, keys.clone())?;
        let authorized = authorize_fleet(rng, &system, &taxis, &BTreeSet::new())? as u64;

        let (mut up, mut comp) = (Vec::with_capacity(iterations), Vec::with_capacity(iterations));
        for it in 0..iterations {
            step(rng, &mut taxis, &cfg);
            let round = run_distribution(rng, &system, &taxis)?;
            if round.distribution.total() != authorized {
                return Err(Error::Config(format!(
                    "{n} taxis, iteration {it}: zone total {} != {authorized} authorized",
                    round.distribution.total()
                )));
            }
            up.push(round.upload.as_secs_f64());
            comp.push(round.compute.as_secs_f64());
        }
        let totals: Vec<f64> = up.iter().zip(&comp).map(|(a, b)| a + b).collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let row = ScalingRow {
            n_taxis: n,
            iterations,
            upload_mean_s: mean(&up),
            compute_mean_s: mean(&comp),
            total_s: mean(&totals),
            stddev_s: sample_stddev(&totals),
        };
        log::info!("{n} taxis: upload {:.4} s, compute {:.4} s", row.upload_mean_s, row.compute_mean_s);
        rows.push(row);
    }
    Ok(ScalingTable { rows })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    use super::*;
    use crate::aggregation::agg_zone_count;

    #[test]
    fn exact_line_has_unit_r_squared() {
        let fit = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        let t = trend(&[1, 2], &[1.0, 2.0], &[0.5, 1.0]).unwrap();
        assert_eq!(t.compute_max_over_min, 2.0);
        assert!(trend(&[1, 2], &[1.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn round_matches_ground_truth_and_consent() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let city = CityConfig { n_taxis: 60, ..Default::default() };
        let mut taxis = init_city(&mut rng, &city).unwrap();
        let keys = RecipientKeyPair::generate(&mut rng).unwrap();
        let system = TaxiSystem::deploy(&mut rng, &city, keys).unwrap();
        let refusing = BTreeSet::from([2]);
        let n = authorize_fleet(&mut rng, &system, &taxis, &refusing).unwrap();
        assert_eq!(n, 48);
        for _ in 0..3 {
            step(&mut rng, &mut taxis, &city);
            let round = run_distribution(&mut rng, &system, &taxis).unwrap();
            let truth: Vec<(f64, f64)> = taxis.iter().filter(|t| t.company != 2).map(TaxiState::position).collect();
            let expected = agg_zone_count(&truth, city.grid_side, city.zone_side).unwrap();
            assert_eq!(round.distribution.counts, expected.counts);
            assert_eq!(round.distribution.total(), 48);
            assert_eq!(round.included_taxis, 48);
            assert_eq!(system.middleware.len(), 60);
        }
    }
}
