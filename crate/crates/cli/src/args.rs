use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "robustutil", version, about = "Robust utility maximization under moment-constrained model uncertainty")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Utility specification, e.g. `power:0.5`.
    #[arg(long, global = true, default_value = "power:0.5")]
    pub utility: String,
    /// Initial wealth x.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub wealth: f64,
    /// Solver tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    pub tol: f64,
    /// Gauss–Hermite nodes for generated markets.
    #[arg(long, global = true, default_value_t = 64)]
    pub nodes: usize,
    /// Seed for multistart randomization.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output file (default: standard output).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Worker threads (1 keeps runs bit-reproducible).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Record wall-clock time in the output (otherwise reported as 0).
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the robust problem for the scenario at the given wealth.
    Solve,
    /// Compare the solver with the lognormal closed forms.
    VerifyBs(BsArgs),
    /// Both sides of the minimax identity over the scenario's densities.
    Minimax,
    /// Modular, Luxemburg and Amemiya norms of the scenario's vectors.
    Norms,
    /// Dual value function v(y) on a grid.
    Vcurve(VcurveArgs),
    /// Feasibility of the scenario's constraint set.
    Feasibility,
    /// Write an example scenario file.
    GenScenario(GenArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BsArgs {
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t: f64,
    #[arg(long = "A", default_value_t = 1.1)]
    pub a: f64,
    /// Relative tolerance of the comparison (default 1e-3, or 1e-4 from 256 nodes).
    #[arg(long)]
    pub check_tol: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct VcurveArgs {
    /// Comma-separated increasing dual levels.
    #[arg(long, value_delimiter = ',', required = true)]
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioKind {
    /// Lognormal quadrature market with `E_Q[S_T] ≥ A`.
    Bs,
    /// Random finite market with random constraints and densities.
    Random,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long, value_enum, default_value_t = ScenarioKind::Bs)]
    pub kind: ScenarioKind,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long = "T", default_value_t = 1.0)]
    pub t: f64,
    #[arg(long = "A", default_value_t = 1.1)]
    pub a: f64,
    /// States of a random scenario.
    #[arg(long, default_value_t = 4)]
    pub states: usize,
    /// Constraints of a random scenario.
    #[arg(long, default_value_t = 1)]
    pub constraints: usize,
    /// Generating densities of a random scenario.
    #[arg(long, default_value_t = 2)]
    pub densities: usize,
}
