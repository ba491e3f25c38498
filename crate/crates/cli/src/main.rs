mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "teeagg", version, about = "Confidential aggregation through an attested enclave")]
struct Cli {
    /// Shared TOML configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Data-owner operations.
    #[command(subcommand)]
    User(UserCmd),
    /// Deploy an aggregation and retrieve its result.
    #[command(subcommand)]
    Recipient(RecipientCmd),
    /// Ciphertext store.
    #[command(subcommand)]
    Middleware(MiddlewareCmd),
    /// Simulated enclave.
    #[command(subcommand)]
    Enclave(EnclaveCmd),
    /// Enclave versus plaintext latency comparison.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Taxi fleet simulation.
    #[command(subcommand)]
    Taxi(TaxiCmd),
}

#[derive(Subcommand)]
pub enum UserCmd {
    /// Create a data key file.
    Keygen {
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encrypt a payload and ingest it at the middleware.
    Submit {
        #[arg(long)]
        key: PathBuf,
        #[arg(long)]
        payload: String,
    },
    /// Attest the enclave and release the data key to it.
    Authorize {
        #[arg(long)]
        key: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum RecipientCmd {
    /// Generate the recipient key pair and write the published identity.
    Deploy {
        /// Canonical spec, e.g. `sum` or `histogram min=0 max=100 bins=10`.
        #[arg(long)]
        spec: String,
        /// libsvm model file, required for `svm`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Attest the enclave, trigger the aggregation and save the sealed result.
    Trigger {
        #[arg(long)]
        private_key: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Open a saved sealed result.
    Open {
        #[arg(long)]
        private_key: PathBuf,
        #[arg(long)]
        result: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum MiddlewareCmd {
    Serve,
    /// Ask a running middleware to forward its store to the enclave.
    Forward,
    /// Per-user record counts and total ciphertext bytes.
    Stats,
}

#[derive(Subcommand)]
pub enum EnclaveCmd {
    Serve,
}

#[derive(Subcommand)]
pub enum BenchCmd {
    Run {
        /// Report path; `.txt` and `.csv` files are written next to it.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
pub enum TaxiCmd {
    Run(TaxiRunArgs),
}

#[derive(Args)]
pub struct TaxiRunArgs {
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write every company's positions together.
    #[arg(long)]
    pub debug_global: bool,
    /// Also run the fleet-size scaling table.
    #[arg(long)]
    pub scaling: bool,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = config::Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::User(cmd) => commands::user(&cfg, cmd),
        Command::Recipient(cmd) => commands::recipient(&cfg, cmd),
        Command::Middleware(cmd) => commands::middleware(&cfg, cmd),
        Command::Enclave(EnclaveCmd::Serve) => commands::enclave_serve(&cfg),
        Command::Bench(BenchCmd::Run { out }) => commands::bench_run(&cfg, &out),
        Command::Taxi(TaxiCmd::Run(args)) => commands::taxi_run(&cfg, &args),
    }
}
