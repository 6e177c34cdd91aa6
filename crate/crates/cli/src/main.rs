//! `rggm`: robust sparse Gaussian graphical models from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robust_ggm::bench::Estimator;
use robust_ggm::GgmError;

#[derive(Debug, Parser)]
#[command(name = "rggm", version, about = "Robust Bayesian graphical lasso via the γ-divergence")]
struct Cli {
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, env = "RGGM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Point estimate (fr or fg) with its support graph.
    Fit(FitArgs),
    /// Posterior sample with summaries and median-probability edges.
    Sample(SampleArgs),
    /// Score a method over replicated synthetic data sets.
    Simulate(SimulateArgs),
    /// Quadrature robustness curves for the γ, KL, t and DP posteriors.
    Verify(VerifyArgs),
    /// Write one synthetic data set and its truth.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Args)]
struct Tuning {
    #[arg(long, default_value_t = 0.1)]
    gamma: f64,
    /// Penalty; defaults to the method's λ_min (0.04 for fg, 0.02 otherwise).
    #[arg(long)]
    lambda: Option<f64>,
    /// `|ω_ij|` below this counts as zero in edge selection.
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    /// Relative-change tolerance of the MM loop.
    #[arg(long = "eps-prime", default_value_t = 1e-4)]
    eps_prime: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct Preprocess {
    /// Center by column medians and scale by MAD.
    #[arg(long)]
    mad: bool,
    /// Drop rows flagged by a Hotelling T² filter at this level.
    #[arg(long)]
    hotelling: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "fr", value_parser = parse_method)]
    method: Estimator,
    #[command(flatten)]
    tuning: Tuning,
    #[command(flatten)]
    pre: Preprocess,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "br", value_parser = parse_method)]
    method: Estimator,
    /// Posterior draws M.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Discarded leading iterations for chain-based methods.
    #[arg(long, default_value_t = 500)]
    burnin: usize,
    /// Degrees of freedom for bt.
    #[arg(long, default_value_t = 3.0)]
    nu: f64,
    /// Debug: unit weights, so every br draw is the fr estimate.
    #[arg(long)]
    unit_weights: bool,
    #[command(flatten)]
    tuning: Tuning,
    #[command(flatten)]
    pre: Preprocess,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario JSON: kind, graph, n, contamination, seed.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "br", value_parser = parse_method)]
    method: Estimator,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    /// Sweep λ over {λ_min·i : i = 1..K} instead of a single value.
    #[arg(long, conflicts_with = "lambda")]
    lambda_grid: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 500)]
    burnin: usize,
    #[arg(long, default_value_t = 3.0)]
    nu: f64,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Experiment JSON; the built-in suite when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
}

fn parse_method(s: &str) -> Result<Estimator, String> {
    Estimator::parse(s).ok_or_else(|| format!("unknown method {s:?}; expected br, br-wbbg, bg, bt, fr or fg"))
}

/// Failure classes and their exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input, bad configuration: 2.
    Input(String),
    /// Numerical breakdown: 3.
    Numeric(String),
    /// Outputs written, but some optimizer did not converge: 4.
    NotConverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Numeric(_) => 3,
            Self::NotConverged(_) => 4,
        }
    }
}

impl From<GgmError> for CliError {
    fn from(e: GgmError) -> Self {
        let msg = e.to_string();
        match e {
            GgmError::Parse { .. }
            | GgmError::Io(_)
            | GgmError::Json(_)
            | GgmError::InvalidParameter(_)
            | GgmError::Dimension { .. } => Self::Input(msg),
            _ => Self::Numeric(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.cmd {
        Command::Fit(a) => commands::fit(&a),
        Command::Sample(a) => commands::sample(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Gen(a) => commands::gen(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (CliError::Input(m) | CliError::Numeric(m) | CliError::NotConverged(m)) = &e;
            eprintln!("error: {m}");
            ExitCode::from(e.code())
        }
    }
}
