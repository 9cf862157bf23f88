use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use glmcal_core::FamilyName;

#[derive(Debug, Parser)]
#[command(
    name = "glmcal",
    version,
    about = "Calibration of unregularized convex ERM in high-dimensional binary GLMs",
    allow_negative_numbers = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the fixed-point system for (α★, σ★, λ★) and report (R★, c★).
    Solve(SolveArgs),
    /// Small-κ expansion constants and the first-order coefficient C_p.
    Expand(LevelArgs),
    /// Over-/under-confidence verdicts from the sufficient conditions.
    Check(LevelArgs),
    /// Limiting and/or first-order calibration curves.
    Curve(CurveArgs),
    /// Limiting calibration error C_κ.
    Ce(SolveArgs),
    /// Simulate data, fit ERM by gradient descent and report calibration.
    Simulate(SimulateArgs),
    /// Curves and simulations across κ ∈ {0.01, 0.05, 0.1, 0.25}.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveChoice {
    Limiting,
    FirstOrder,
    Both,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number, got {v}"))
    }
}

fn level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("levels must lie in (0, 1), got {v}"))
    }
}

fn order(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if (2..=2000).contains(&v) {
        Ok(v)
    } else {
        Err(format!("quadrature order must be in 2..=2000, got {v}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Activation family.
    #[arg(long, default_value = "logistic")]
    pub family: FamilyName,
    /// Signal strength ‖w★‖.
    #[arg(long, default_value_t = 1.0, value_parser = positive, allow_negative_numbers = true)]
    pub gamma: f64,
    /// Output file; relative paths resolve against $GLMCAL_OUT_DIR when set.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format (defaults to json for scalar records, csv for curves).
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Gauss–Hermite nodes per axis.
    #[arg(long, default_value_t = 120, value_parser = order)]
    pub quad_order: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Residual tolerance of the fixed-point solver.
    #[arg(long, default_value_t = 1e-10, value_parser = positive)]
    pub tol: f64,
    /// First rung of the κ continuation ladder.
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    pub ladder_start: f64,
}

#[derive(Debug, Clone, Args)]
pub struct Levels {
    /// Calibration level(s); repeat or comma-separate.
    #[arg(long, value_delimiter = ',', value_parser = level)]
    pub p: Vec<f64>,
    /// Level grid as start:stop:step, or `default` for 0.505..0.995 by 0.005.
    #[arg(long)]
    pub p_grid: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Aspect ratio d/n.
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    pub kappa: f64,
}

#[derive(Debug, Clone, Args)]
pub struct LevelArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub levels: Levels,
}

#[derive(Debug, Clone, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub levels: Levels,
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    pub kappa: f64,
    #[arg(long, value_enum, default_value = "both")]
    pub kind: CurveChoice,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Gradient-descent step size.
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    pub step: f64,
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-5, value_parser = positive)]
    pub grad_tol: f64,
    /// Gradient-descent iteration cap.
    #[arg(long, default_value_t = 2_000_000)]
    pub max_iter: usize,
    /// Seeds: a count N (seeds 0..N) or a comma-separated list.
    #[arg(long, default_value = "1")]
    pub seeds: String,
    /// Reliability bins over [0.5, 1].
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Held-out sample size for reliability tables.
    #[arg(long, default_value_t = 20_000)]
    pub test_n: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub levels: Levels,
    /// Dimension.
    #[arg(long, default_value_t = 100)]
    pub d: usize,
    /// Sample size; defaults to round(d/κ).
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_parser = positive, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub levels: Levels,
    #[arg(long, default_value_t = 100)]
    pub d: usize,
    /// Override the κ values; repeat or comma-separate.
    #[arg(long, value_delimiter = ',', value_parser = positive)]
    pub kappa: Vec<f64>,
}
