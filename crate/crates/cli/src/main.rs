//! `modlock` command-line tool: orbit, adjoint, locking curve, cone,
//! single-point verification and lock-map sweeps. Every command writes its
//! artifacts into `--out` and is safe to rerun.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "modlock", version, about = "Frequency locking under modulated-wave forcing")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in system name or path to a JSON system descriptor.
    #[arg(long, global = true)]
    pub system: Option<String>,
    /// System parameters as key=value pairs.
    #[arg(long, global = true, num_args = 1.., value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long = "tol-rel", global = true)]
    pub tol_rel: Option<f64>,
    #[arg(long = "tol-abs", global = true)]
    pub tol_abs: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Relative periodic orbit and Floquet multipliers.
    Orbit(OrbitOpts),
    /// Normalized adjoint pair on the orbit grid.
    Adjoint(AdjointOpts),
    /// Locking curve G and its singular set.
    Gcurve(GcurveOpts),
    /// Predicted locking cone at fixed alpha.
    Cone(ConeOpts),
    /// Simulate one (alpha, beta, gamma) point and diagnose locking.
    Verify(VerifyOpts),
    /// Lock map over a (beta, gamma) grid.
    Sweep(SweepOpts),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitOpts {
    /// Number of psi grid nodes.
    #[arg(long)]
    pub n_psi: Option<usize>,
    /// Required gap between nontrivial multipliers and the unit circle.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub newton_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdjointOpts {
    /// Orbit artifact; defaults to `orbit.json` in the output directory.
    #[arg(long)]
    pub orbit: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcurveOpts {
    /// Averaging order; detected from the forcing when omitted.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub order: Option<u8>,
    #[arg(long)]
    pub n_theta: Option<usize>,
    #[arg(long)]
    pub n_phi: Option<usize>,
    #[arg(long)]
    pub orbit: Option<PathBuf>,
    #[arg(long)]
    pub adjoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeOpts {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma_min: Option<f64>,
    #[arg(long)]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub c1: Option<f64>,
    #[arg(long)]
    pub c2: Option<f64>,
    /// Curve artifact; defaults to `gcurve.json` in the output directory.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOpts {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Simulated time; defaults to 400 modulation periods.
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    /// Also write the phase time series.
    #[arg(long)]
    #[serde(default)]
    pub series: bool,
    #[arg(long)]
    pub drift_tol: Option<f64>,
    #[arg(long)]
    pub residual_tol: Option<f64>,
    #[arg(long)]
    pub phase_tol: Option<f64>,
    #[arg(long)]
    pub orbit: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOpts {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_min: Option<f64>,
    #[arg(long)]
    pub beta_max: Option<f64>,
    #[arg(long)]
    pub beta_count: Option<usize>,
    #[arg(long)]
    pub gamma_min: Option<f64>,
    #[arg(long)]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    pub gamma_count: Option<usize>,
    /// Simulated time per cell; defaults to 400 modulation periods.
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    /// Margin around interior singular values (needs `--curve`).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Boundary fit power: 1 linear, 2 quadratic.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub order: Option<u8>,
    #[arg(long)]
    pub drift_tol: Option<f64>,
    #[arg(long)]
    pub residual_tol: Option<f64>,
    #[arg(long)]
    pub orbit: Option<PathBuf>,
    /// Curve artifact used to flag near-singular cells.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

/// Process outcome mapped onto the exit-code contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    PredicateFailed,
    Unlocked,
}

impl Outcome {
    fn code(self) -> u8 {
        match self {
            Outcome::Ok => 0,
            Outcome::PredicateFailed => 2,
            Outcome::Unlocked => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = commands::Context::new(cli.global).and_then(|ctx| match cli.command {
        Command::Orbit(o) => commands::orbit(&ctx, o),
        Command::Adjoint(o) => commands::adjoint(&ctx, o),
        Command::Gcurve(o) => commands::gcurve(&ctx, o),
        Command::Cone(o) => commands::cone(&ctx, o),
        Command::Verify(o) => commands::verify(&ctx, o),
        Command::Sweep(o) => commands::sweep(&ctx, o),
    });
    match result {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
