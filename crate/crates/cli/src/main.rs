//! `duvdiff`: simulate, preprocess, fit and compare far-field diffraction
//! images of molecular beams at a deep-ultraviolet light grating.

mod args;
mod commands;
mod report;
mod trace;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use duv_diffraction::beamline::{QuadratureSizes, SimulationOptions};
use duv_diffraction::grating::ChannelOptions;
use duv_diffraction::{Error, ErrorKind, ExperimentConfig};
use serde_json::json;

use report::Log;

#[derive(Debug, Parser)]
#[command(name = "duvdiff", version, about = "Far-field DUV grating diffraction of molecular beams")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Emit diagnostics as JSON lines on stderr.
    #[arg(long, global = true)]
    log_json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a detector image from a configuration.
    Simulate(commands::SimulateArgs),
    /// Run the background, despike, plane, rotation and crop chain on a raw frame.
    Preprocess(commands::PreprocessArgs),
    /// Fit slit height, velocity shift, grating height and optical constants to an image.
    Fit(commands::FitArgs),
    /// Compare two images: RSS, trace and peak table.
    Compare(commands::CompareArgs),
    /// Print the momentum-kick distribution at one velocity as CSV.
    DumpKicks(commands::DumpKicksArgs),
    /// Print the configuration with every value in SI units.
    DumpConfig(commands::DumpConfigArgs),
}

/// Quadrature and truncation controls shared by every simulating command.
#[derive(Debug, Clone, Args)]
pub struct QuadratureArgs {
    /// Nodes across the upstream limiting aperture.
    #[arg(long, default_value_t = 128)]
    source_points: usize,
    /// Nodes across the downstream limiting aperture.
    #[arg(long, default_value_t = 16)]
    angles: usize,
    /// Velocity quadrature nodes.
    #[arg(long, default_value_t = 64)]
    velocities: usize,
    /// Largest absorbed-photon count per transit.
    #[arg(long, default_value_t = ChannelOptions::default().m_max)]
    m_max: usize,
}

impl QuadratureArgs {
    pub fn options(&self) -> SimulationOptions {
        SimulationOptions {
            quadrature: QuadratureSizes {
                source_points: self.source_points,
                angles: self.angles,
                velocities: self.velocities,
            },
            channels: ChannelOptions {
                m_max: self.m_max,
                ..ChannelOptions::default()
            },
            ..SimulationOptions::default()
        }
    }

    pub fn record(&self) -> report::Quadrature {
        report::Quadrature {
            source_points: self.source_points,
            angles: self.angles,
            velocities: self.velocities,
        }
    }
}

/// Command-line misuse detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Reads and validates a configuration file. An unreadable file counts as a
/// configuration error.
pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn create_dir(dir: &Path) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.to_path_buf())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Log { json: cli.log_json };
    if let Some(n) = cli.threads {
        if n == 0 {
            log.error("--threads must be at least 1", json!({}));
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log.error(&format!("cannot start worker pool: {e}"), json!({}));
            return ExitCode::from(4);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a, log),
        Command::Preprocess(a) => commands::preprocess(&a, log),
        Command::Fit(a) => commands::fit(&a, log),
        Command::Compare(a) => commands::compare(&a, log),
        Command::DumpKicks(a) => commands::dump_kicks(&a),
        Command::DumpConfig(a) => commands::dump_config(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            log.error(&format!("{e:#}"), json!({ "exit_code": code }));
            ExitCode::from(code)
        }
    }
}
