//! `astrosnn` experiment runner: loads and validates a TOML experiment
//! config, runs one subcommand, and writes its CSV/JSON artifacts plus a
//! run manifest atomically into the output directory.
//!
//! Exit codes (see [`exit`]) are stable: 0 success, 2 usage, 3 missing
//! config file, 4 runtime failure, 5 config parse error, 6 unknown config
//! key, 7 config value out of range or of the wrong type.
//!
//! Log verbosity follows the `ASTROSNN_LOG` environment variable
//! (`tracing` filter syntax, default `warn`).

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;
use tracing::debug;

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{unix_ms, RunManifest};

pub const LOG_ENV: &str = "ASTROSNN_LOG";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const CONFIG_MISSING: i32 = 3;
    pub const RUNTIME: i32 = 4;
    pub const CONFIG_PARSE: i32 = 5;
    pub const CONFIG_UNKNOWN_KEY: i32 = 6;
    pub const CONFIG_INVALID: i32 = 7;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
    #[error("writing artifacts: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Missing { .. }) => exit::CONFIG_MISSING,
            CliError::Config(ConfigError::Parse { .. }) => exit::CONFIG_PARSE,
            CliError::Config(ConfigError::UnknownKey(_)) => exit::CONFIG_UNKNOWN_KEY,
            CliError::Config(ConfigError::Invalid { .. }) => exit::CONFIG_INVALID,
            CliError::Runtime(_) | CliError::Io(_) => exit::RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "astrosnn",
    version,
    about = "Astrocyte-augmented spiking network experiments"
)]
pub struct Cli {
    /// Experiment config (TOML). Without it every key takes its default.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory; overrides paths.out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse an event stream (text or .ev42) and re-emit it as .ev42.
    Ingest {
        /// Event file; defaults to paths.events.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
    },
    /// Bin events into the spike raster the network consumes.
    Encode {
        /// Event file; defaults to paths.events, else the synthetic workload.
        #[arg(long, value_name = "FILE")]
        input: Option<PathBuf>,
    },
    /// Run the network once with window and astrocyte telemetry.
    Simulate,
    /// Fault campaign with astrocytes off and on.
    Faults {
        /// Trial pool size; overrides fault.threads (0 = all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// MAC throughput and latency table.
    Perf,
    /// Greedy live hyperparameter tuning over dfx.grid.
    Adapt,
    /// Train the softmax readout with Adam and early stopping.
    Train,
    /// Gather the summaries already in the output directory.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Encode { .. } => "encode",
            Command::Simulate => "simulate",
            Command::Faults { .. } => "faults",
            Command::Perf => "perf",
            Command::Adapt => "adapt",
            Command::Train => "train",
            Command::Report => "report",
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env(LOG_ENV)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::USAGE } else { exit::OK };
        }
    };
    match execute(&cli) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command. Config errors write nothing; any other failure
/// writes only the manifest, with `status = "error"`.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let started = unix_ms();
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        config.paths.out_dir = dir.clone();
    }
    let out_dir = config.paths.out_dir.clone();
    let name = cli.command.name();

    let result = match &cli.command {
        Command::Ingest { input } => commands::ingest(&config, input.as_deref()),
        Command::Encode { input } => commands::encode(&config, input.as_deref()),
        Command::Simulate => commands::simulate(&config),
        Command::Faults { threads } => commands::faults(&config, *threads),
        Command::Perf => commands::perf(&config),
        Command::Adapt => commands::adapt(&config),
        Command::Train => commands::train(&config),
        Command::Report => commands::report(&out_dir),
    };
    let (artifacts, failure) = match result {
        Ok(artifacts) => match artifacts.commit(&out_dir) {
            Ok(paths) => (paths, None),
            Err(e) => (Vec::new(), Some(CliError::Io(e))),
        },
        Err(e) => (Vec::new(), Some(e)),
    };
    if let Some(e) = &failure {
        debug!(subcommand = name, "{e}");
    }

    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: name.to_owned(),
        config_path: cli.config.clone(),
        config_hash: config.hash(),
        seed: config.sim.seed,
        artifacts: artifacts.clone(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        status: if failure.is_none() { "ok" } else { "error" },
        error: failure.as_ref().map(ToString::to_string),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::create_dir_all(&out_dir)?;
    output::write_atomic(&out_dir, &RunManifest::file_name(name), text.as_bytes())?;

    match failure {
        Some(e) => Err(e),
        None => {
            println!("{name}: wrote {} artifacts to {}", artifacts.len(), out_dir.display());
            Ok(())
        }
    }
}
