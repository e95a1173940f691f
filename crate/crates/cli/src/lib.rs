//! Command-line experiment harness: scenario generation, single solves,
//! strategy comparisons, trade-off sweeps, convergence statistics and
//! training-convergence demos. Every run writes CSVs (with a provenance
//! comment line), TOML documents and SVG charts into an output directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod output;
pub mod plot;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "FEDALLOC_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fedalloc::Error),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("invalid arguments: {0}")]
    Usage(String),
    #[error("not converged: {0}")]
    NotConverged(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    /// 1 configuration, 2 infeasibility, 3 non-convergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        use fedalloc::Error as E;
        match self {
            CliError::Core(E::Infeasible(_) | E::InfeasibleAccuracy { .. }) => 2,
            CliError::Core(E::NotConverged(_) | E::Divergence { .. }) => 3,
            CliError::Core(_) | CliError::Usage(_) => 1,
            CliError::NotConverged(_) | CliError::Check(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fedalloc", version, about = "Multi-service federated learning resource allocation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Directory receiving all artifacts.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "fedalloc-out")]
    pub out: PathBuf,
    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a scenario and write it as a TOML document.
    Generate(GenerateArgs),
    /// Run one allocation strategy.
    Solve(SolveArgs),
    /// Run every strategy on the same scenario.
    Compare(CompareArgs),
    /// Vary one service's time/energy trade-off weight.
    SweepKappa(SweepArgs),
    /// Iteration statistics of the decentralized modes over many realizations.
    ConvergenceStudy(StudyArgs),
    /// Training loss-gap traces over a learning-rate grid.
    FedlDemo(FedlArgs),
}

#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Seed of a freshly generated scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Scenario document written by `generate`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Number of UEs when generating.
    #[arg(long, default_value_t = 50)]
    pub n_ues: usize,
    /// Scenario generation config (TOML) when generating.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AdmmArgs {
    #[arg(long)]
    pub rho1: Option<f64>,
    #[arg(long)]
    pub rho2: Option<f64>,
    #[arg(long)]
    pub proximal_weight: Option<f64>,
    #[arg(long)]
    pub relax_alpha: Option<f64>,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub max_outer: Option<usize>,
}

impl AdmmArgs {
    pub fn params(&self) -> Result<fedalloc::subproblems::AdmmParams, CliError> {
        let mut p = fedalloc::subproblems::AdmmParams::default();
        if let Some(v) = self.rho1 {
            p.rho1 = v;
        }
        if let Some(v) = self.rho2 {
            p.rho2 = v;
        }
        if let Some(v) = self.proximal_weight {
            p.proximal_weight = v;
        }
        if let Some(v) = self.relax_alpha {
            p.relax_alpha = v;
        }
        if let Some(v) = self.eps1 {
            p.eps1 = v;
        }
        if let Some(v) = self.eps2 {
            p.eps2 = v;
        }
        if let Some(v) = self.max_outer {
            p.max_outer = v;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Centralized,
    JpAdmm,
    JpAdmmEs,
    GsMiadmm,
    #[value(name = "heuristic-1")]
    Heuristic1,
    #[value(name = "heuristic-2")]
    Heuristic2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum BandwidthRuleArg {
    #[default]
    SpectralEfficiency,
    EqualUploadTime,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n_ues: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Centralized)]
    pub mode: ModeArg,
    /// Bandwidth rule of heuristic-2.
    #[arg(long, value_enum, default_value_t = BandwidthRuleArg::SpectralEfficiency)]
    pub bandwidth_rule: BandwidthRuleArg,
    #[command(flatten)]
    pub admm: AdmmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = BandwidthRuleArg::SpectralEfficiency)]
    pub bandwidth_rule: BandwidthRuleArg,
    #[command(flatten)]
    pub admm: AdmmArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Service whose weight is swept (1-based).
    #[arg(long, default_value_t = 3)]
    pub service: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.5,1,2")]
    pub kappas: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct StudyArgs {
    /// Master seed; each repetition draws its own scenario seed from it.
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 50)]
    pub n_ues: usize,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub repetitions: usize,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
    #[command(flatten)]
    pub admm: AdmmArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Args)]
pub struct FedlArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub n_ues: usize,
    #[arg(long, default_value_t = 10)]
    pub dim: usize,
    #[arg(long, default_value_t = 50)]
    pub samples_per_ue: usize,
    #[arg(long, value_enum, default_value_t = FamilyArg::Linear)]
    pub family: FamilyArg,
    #[arg(long, default_value_t = 0.05)]
    pub theta: f64,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    /// Number of grid points inside the feasible learning-rate interval,
    /// in addition to the optimal rate.
    #[arg(long, default_value_t = 5)]
    pub eta_points: usize,
}

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => commands::generate(a, &cli.out),
        Command::Solve(a) => commands::solve(a, &cli.out),
        Command::Compare(a) => commands::compare(a, &cli.out),
        Command::SweepKappa(a) => commands::sweep_kappa(a, &cli.out),
        Command::ConvergenceStudy(a) => commands::convergence_study(a, &cli.out),
        Command::FedlDemo(a) => commands::fedl_demo(a, &cli.out),
    }
}
