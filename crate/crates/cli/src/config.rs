use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Deserialize;
use teeagg::benchmark::BenchConfig;
use teeagg::enclave::DEFAULT_MAX_BATCH_BYTES;
use teeagg::taxi::{CityConfig, DEFAULT_SCALING_SIZES};
use teeagg::wire::Endpoint;

/// One TOML file shared by every subcommand; each reads the sections it
/// needs. Relative paths resolve against the working directory.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub endpoints: Endpoints,
    /// Published identity JSON written by `recipient deploy`.
    pub identity: Option<PathBuf>,
    pub middleware: MiddlewareSection,
    pub enclave: EnclaveSection,
    pub city: CityConfig,
    pub taxi: TaxiSection,
    pub bench: BenchConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub middleware: Option<SocketAddr>,
    /// Hex of the middleware's static channel key.
    pub middleware_pin: Option<String>,
    pub enclave: Option<SocketAddr>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiddlewareSection {
    pub listen: SocketAddr,
    pub store: Option<PathBuf>,
    /// Hex static channel key; created on first start.
    pub key_file: Option<PathBuf>,
    pub max_batch_bytes: usize,
}

impl Default for MiddlewareSection {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7400".parse().expect("literal address"),
            store: None,
            key_file: None,
            max_batch_bytes: DEFAULT_MAX_BATCH_BYTES,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnclaveSection {
    pub listen: SocketAddr,
    pub max_batch_bytes: usize,
}

impl Default for EnclaveSection {
    fn default() -> Self {
        Self { listen: "127.0.0.1:7401".parse().expect("literal address"), max_batch_bytes: DEFAULT_MAX_BATCH_BYTES }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaxiSection {
    /// Companies whose taxis never release their keys.
    pub refusing_companies: Vec<u32>,
    pub scaling_sizes: Vec<usize>,
    pub scaling_iterations: usize,
}

impl Default for TaxiSection {
    fn default() -> Self {
        Self { refusing_companies: Vec::new(), scaling_sizes: DEFAULT_SCALING_SIZES.to_vec(), scaling_iterations: 10 }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn identity_path(&self) -> Result<&Path> {
        self.identity.as_deref().ok_or_else(|| anyhow!("config lacks `identity`"))
    }

    pub fn middleware_endpoint(&self) -> Result<Endpoint> {
        let addr = self.endpoints.middleware.ok_or_else(|| anyhow!("config lacks `endpoints.middleware`"))?;
        let pin = self.endpoints.middleware_pin.as_deref().map(parse_key_hex).transpose()?;
        Ok(Endpoint::Tcp { addr, pin })
    }

    /// The enclave is authenticated by its quote, so no pin is needed.
    pub fn enclave_endpoint(&self) -> Result<Endpoint> {
        let addr = self.endpoints.enclave.ok_or_else(|| anyhow!("config lacks `endpoints.enclave`"))?;
        Ok(Endpoint::Tcp { addr, pin: None })
    }
}

pub fn parse_key_hex(text: &str) -> Result<[u8; 32]> {
    let bytes = hex::decode(text.trim()).context("key is not hex")?;
    bytes.try_into().map_err(|b: Vec<u8>| anyhow!("key must be 32 bytes, got {}", b.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_config_parses() {
        let cfg: Config = toml::from_str(
            r#"
            identity = "identity.json"
            [endpoints]
            middleware = "127.0.0.1:9000"
            middleware_pin = "0101010101010101010101010101010101010101010101010101010101010101"
            enclave = "127.0.0.1:9001"
            [city]
            n_taxis = 200
            [taxi]
            refusing_companies = [3]
            [bench]
            n_users = 50
            iterations = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.city.n_taxis, 200);
        assert_eq!(cfg.city.grid_side, 1000);
        assert_eq!(cfg.taxi.refusing_companies, vec![3]);
        assert_eq!(cfg.bench.n_users, 50);
        let Endpoint::Tcp { pin, .. } = cfg.middleware_endpoint().unwrap() else { panic!() };
        assert_eq!(pin, Some([1; 32]));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Config>("[city]\ngrid = 5\n").is_err());
        assert!(parse_key_hex("abcd").is_err());
    }
}
