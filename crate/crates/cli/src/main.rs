#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
#[cfg(test)]
use clap::CommandFactory;
use laminate_core::Error;

#[derive(Debug, Parser)]
#[command(name = "laminate", version, about = "Laminate mechanism simulation and hinge identification")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Production time step (s).
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Baumgarte velocity gain α (1/s).
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Baumgarte position gain β (1/s).
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    /// Maximum burn-in steps before giving up on loop closure.
    #[arg(long, global = true)]
    pub burn_in_steps: Option<usize>,
    /// Burn-in time step (s).
    #[arg(long, global = true)]
    pub burn_in_dt: Option<f64>,
    /// Production duration (s).
    #[arg(long, global = true)]
    pub duration: Option<f64>,
    /// Directory for written files.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Seed for stochastic utilities.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a mechanism and write trajectory, plots, frames and manifest.
    Simulate(SimulateArgs),
    /// Identify hinge stiffness and damping from a motion-capture CSV.
    Identify(IdentifyArgs),
    /// Evaluate a hinge property surface at a design point.
    Hinge(HingeArgs),
    /// Fit quadratic stiffness and damping surfaces to an experiment table.
    FitSurface(FitSurfaceArgs),
    /// Check a mechanism file against the schema.
    Validate(ValidateArgs),
    /// Write a synthetic motion-capture CSV of a single-hinge pendulum.
    SynthPendulum(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Mechanism YAML.
    pub mechanism: PathBuf,
    /// Sampling rate of frames.json (Hz).
    #[arg(long, default_value_t = 30.0)]
    pub frame_rate: f64,
    /// Largest acceptable closure error after burn-in (m).
    #[arg(long)]
    pub constraint_tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Motion-capture CSV (`t,<body>_qw,<body>_qx,<body>_qy,<body>_qz,...`).
    pub recording: PathBuf,
    /// Fixed body (defaults to the first body in the file).
    #[arg(long)]
    pub parent: Option<String>,
    /// Swinging body (defaults to the second body in the file).
    #[arg(long)]
    pub child: Option<String>,
    /// Mechanism YAML to take the pendulum mass properties from.
    #[arg(long, requires = "joint")]
    pub mechanism: Option<PathBuf>,
    /// Hinge joint id in the mechanism.
    #[arg(long)]
    pub joint: Option<String>,
    /// Swinging mass (kg), when no mechanism is given.
    #[arg(long, conflicts_with = "mechanism")]
    pub mass: Option<f64>,
    /// Inertia about the centre of mass, around the hinge direction (kg·m²).
    #[arg(long, conflicts_with = "mechanism")]
    pub inertia_com: Option<f64>,
    /// Hinge-to-centre-of-mass distance (m).
    #[arg(long, conflicts_with = "mechanism")]
    pub lever: Option<f64>,
    /// Harmonics of the smoothing basis.
    #[arg(long)]
    pub order: Option<usize>,
    /// Smoothing window in periods of the dominant oscillation.
    #[arg(long)]
    pub window_periods: Option<f64>,
    /// Gravitational acceleration (m/s²).
    #[arg(long, default_value_t = 9.81)]
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HingeModel {
    Comprehensive,
    Air,
    Width,
    Length,
}

#[derive(Debug, Args)]
pub struct HingeArgs {
    #[arg(long, value_enum, default_value_t = HingeModel::Comprehensive)]
    pub model: HingeModel,
    /// Hinge gap length (m).
    #[arg(long = "l", allow_negative_numbers = true)]
    pub length: Option<f64>,
    /// Flexure width (m).
    #[arg(long = "w", allow_negative_numbers = true)]
    pub width: Option<f64>,
    /// Moving-body area (m²).
    #[arg(long = "a", allow_negative_numbers = true)]
    pub area: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitSurfaceArgs {
    /// CSV with columns `l,w,a,k_meas,b_meas`.
    pub table: PathBuf,
    /// Design columns entering the fit.
    #[arg(long, value_delimiter = ',', default_value = "l,w,a")]
    pub variables: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    pub mechanism: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Single-hinge mechanism YAML.
    pub mechanism: PathBuf,
    /// Capture rate (Hz).
    #[arg(long, default_value_t = 360.0)]
    pub rate: f64,
    /// Standard deviation of additive angle noise (rad).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Samples to blank out on the child body, as `start:count`.
    #[arg(long)]
    pub dropout: Vec<String>,
    /// Output file (defaults to `recording.csv` in the output directory).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Schema(_) | Error::Reference(_) | Error::Topology(_) | Error::Value(_) | Error::Io(_) => 2,
        Error::BurnInFailed { .. } | Error::Rank(_) | Error::Spectrum(_) | Error::DegenerateAxis(_) => 3,
        Error::NumericalBlowup { .. } | Error::SingularMass { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Simulate(a) => commands::simulate(g, a),
        Command::Identify(a) => commands::identify(g, a),
        Command::Hinge(a) => commands::hinge(a),
        Command::FitSurface(a) => commands::fit_surface(a),
        Command::Validate(a) => commands::validate(a),
        Command::SynthPendulum(a) => commands::synth_pendulum(g, a),
    };
    match result {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out).expect("serializable output");
            // a closed pipe downstream is not our failure
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            let report = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
                "exit_code": code,
            });
            eprintln!("{report}");
            ExitCode::from(code)
        }
    }
}
