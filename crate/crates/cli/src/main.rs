//! `spinlab` command-line front end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "spinlab",
    version,
    about = "Product-form engine and simulators for networks with spinning"
)]
#[command(after_help = "Run `spinlab help-config` to print the config file schema.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Network or run config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the config and report stability.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Box-truncated exact law of N with log B_n and the spinning allocation.
    Exact {
        #[command(flatten)]
        common: Common,
        /// Box corner: one value for every route or a comma list.
        #[arg(long = "box", value_delimiter = ',')]
        box_max: Vec<u32>,
    },
    /// One open packet-level run.
    SimPacket {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunLength,
        /// Capacity scale.
        #[arg(long)]
        c: Option<u32>,
    },
    /// One flow-level run under the spinning allocation.
    SimFlow {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        run: RunLength,
    },
    /// Coupled packet-level versus flow-level runs across capacity scales.
    Converge {
        #[command(flatten)]
        common: Common,
    },
    /// Stationary N under several size laws with equal means.
    Insensitivity {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-network traversal rates against theory.
    Throughput {
        #[command(flatten)]
        common: Common,
    },
    /// Closed-network traversal counts against their fluid drift.
    Renewal {
        #[command(flatten)]
        common: Common,
    },
    /// Open packet network (or the count chain) against the exact law.
    Stationarity {
        #[command(flatten)]
        common: Common,
        /// Simulate the exponential-size count chain instead of packets.
        #[arg(long)]
        ctmc: bool,
    },
    /// Print the config file schema.
    HelpConfig,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct RunLength {
    /// Model-time horizon.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Stop after this many events.
    #[arg(long)]
    pub events: Option<u64>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Exact { .. } => "exact",
            Command::SimPacket { .. } => "sim-packet",
            Command::SimFlow { .. } => "sim-flow",
            Command::Converge { .. } => "converge",
            Command::Insensitivity { .. } => "insensitivity",
            Command::Throughput { .. } => "throughput",
            Command::Renewal { .. } => "renewal",
            Command::Stationarity { .. } => "stationarity",
            Command::HelpConfig => "help-config",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            if code != 0 {
                eprintln!("\n{}", config::SCHEMA_HELP);
            }
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(commands::Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", config::SCHEMA_HELP);
            ExitCode::from(1)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
