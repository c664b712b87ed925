use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vrb_formation::sim::CORRIDOR_WIDTH_M;

pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(
    name = "vrbf",
    version,
    about = "Virtual-rigid-body formation simulator and verification suites"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario file and write metrics.
    Run(RunArgs),
    /// Run the built-in corridor scenario.
    Corridor(CorridorArgs),
    /// Monte Carlo check of the pairwise collision bound.
    VerifyBound(VerifyBoundArgs),
    /// Compare the scale projection against brute-force enumeration.
    VerifyQp(VerifyQpArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Overrides {
    /// Noise and message-bus seed; defaults to the scenario's own seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of ticks to simulate.
    #[arg(long)]
    pub ticks: Option<u64>,
    /// Per-pair collision probability bound.
    #[arg(long)]
    pub pcoll: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Output directory for CSV and JSONL files.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Serve the scenario live on `host:port` instead of running it offline.
    #[arg(long, value_name = "HOST:PORT")]
    pub serve: Option<SocketAddr>,
}

#[derive(Debug, Args)]
pub struct CorridorArgs {
    /// Corridor width, m.
    #[arg(long, default_value_t = CORRIDOR_WIDTH_M)]
    pub width: f64,
    #[arg(long, default_value_t = 4)]
    pub robots: usize,
    #[command(flatten)]
    pub overrides: Overrides,
    #[arg(long, default_value = "out/corridor")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyBoundArgs {
    #[arg(long, default_value_t = 1.5e-3)]
    pub pcoll: f64,
    /// Monte Carlo samples per instance; accepts `1e6`.
    #[arg(long, default_value = "1e5", value_parser = parse_count)]
    pub samples: usize,
    /// Random pair instances.
    #[arg(long, default_value_t = 200)]
    pub instances: usize,
    /// Isotropic instances placed at the bound.
    #[arg(long, default_value_t = 20)]
    pub calibration: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Also write the per-instance report as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyQpArgs {
    #[arg(long, default_value = "1000", value_parser = parse_count)]
    pub problems: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

/// Positive integer count, also in float notation such as `1e6`.
pub fn parse_count(text: &str) -> Result<usize, String> {
    if let Ok(n) = text.parse::<usize>() {
        return if n > 0 {
            Ok(n)
        } else {
            Err("count must be positive".into())
        };
    }
    let x: f64 = text
        .parse()
        .map_err(|_| format!("`{text}` is not a number"))?;
    if !(x >= 1.0 && x <= 1e12 && x.fract() == 0.0) {
        return Err(format!("`{text}` is not a positive whole count"));
    }
    Ok(x as usize)
}
