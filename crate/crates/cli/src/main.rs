//! `faecph`: simulate, cross-validate, fit, predict and project.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "faecph", version, about = "Joint factor analysis and exponential hazards with informative censoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw training and test datasets from a JSON scenario.
    Simulate {
        scenario: PathBuf,
        /// Overrides the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate a grid of candidates and select one.
    Cv(CvArgs),
    /// Fit a joint model on every sample of a dataset.
    Fit(FitArgs),
    /// Predict event times with a fitted model.
    Predict(ApplyArgs),
    /// Write latent posterior means for plotting.
    Project(ApplyArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Fast,
    Full,
}

#[derive(Args, Debug, Clone)]
pub struct FitOptions {
    #[arg(long, value_enum, default_value_t = Mode::Fast)]
    pub fit_mode: Mode,
    #[arg(long, default_value_t = faecph::joint::DEFAULT_GEM_ITERS)]
    pub gem_iters: usize,
    /// MH burn-in draws per individual.
    #[arg(long, default_value_t = 300)]
    pub burn_in: usize,
    /// MH draws kept per individual.
    #[arg(long, default_value_t = 300)]
    pub n_keep: usize,
    /// Re-tune the proposal scale at every GEM iteration.
    #[arg(long)]
    pub retune: bool,
    /// Iteration cap for the factor-analysis fit.
    #[arg(long, default_value_t = faecph::fa::DEFAULT_MAX_ITERS)]
    pub fa_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    pub manifest: PathBuf,
    /// Latent dimensions to try (comma list).
    #[arg(long, value_delimiter = ',', default_values_t = [2, 3, 4, 5])]
    pub dz: Vec<usize>,
    /// L1 penalties for the lasso baseline (comma list, may be empty).
    #[arg(long, value_delimiter = ',')]
    pub gamma: Vec<f64>,
    /// Covariates for a fixed ECPH-C baseline, as block:feature (comma list).
    #[arg(long, value_delimiter = ',')]
    pub fixed: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub dz: usize,
    #[command(flatten)]
    pub fit: FitOptions,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ApplyArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { scenario, seed, out } => commands::simulate(&scenario, seed, &out),
        Command::Cv(args) => commands::cv(&args),
        Command::Fit(args) => commands::fit(&args),
        Command::Predict(args) => commands::predict(&args),
        Command::Project(args) => commands::project(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
