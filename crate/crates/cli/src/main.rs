use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

/// Disclosure-risk estimation for categorical microdata with log-linear
/// models and Dirichlet-process random effects.
#[derive(Debug, Parser)]
#[command(name = "dprisk", version)]
struct Cli {
    /// TOML run configuration; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cross-classify microdata into a contingency table.
    Tabulate(TabulateArgs),
    /// Draw a simple random sample from a population table.
    Sample(SampleArgs),
    /// Generate a synthetic population table.
    Generate(GenerateArgs),
    /// Maximum-likelihood fit of a log-linear model.
    FitMl(FitMlArgs),
    /// Penalized-likelihood forward search over two-way interactions.
    SearchC0(SearchArgs),
    /// Run the MCMC sampler and write rate draws.
    FitDp(FitDpArgs),
    /// Risk estimates, quantiles and per-cell risks.
    Risk(RiskArgs),
    /// Two-stage model selection.
    Select(SelectArgs),
    /// Print a human-readable summary of a JSON report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct TabulateArgs {
    /// Microdata file (comma or tab separated, header row).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Declarations such as `AGE:12,SEX:M|F`; inferred from the data if absent.
    #[arg(long)]
    variables: Option<String>,
    /// Structural-zero mask file.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SampleArgs {
    /// Population table with F counts.
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    pi: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long)]
    variables: Option<String>,
    /// Generating model, e.g. `I + A*B`.
    #[arg(long)]
    model: Option<String>,
    /// Comma-separated coefficients; drawn at random when absent.
    #[arg(long)]
    beta: Option<String>,
    /// Standard deviation of randomly drawn non-intercept coefficients.
    #[arg(long, default_value_t = 1.0)]
    beta_sd: f64,
    /// Expected population size.
    #[arg(long)]
    population: u64,
    /// `none`, `iid-gamma:SHAPE,RATE`, `iid-normal:MEAN,SD`,
    /// `dp-gamma:MASS,SHAPE,RATE` or `dp-normal:MASS,MEAN,SD`.
    #[arg(long, default_value = "none")]
    effects: String,
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct FitMlArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[arg(long)]
    table: PathBuf,
    /// Starting model; the independence model by default.
    #[arg(long)]
    model: Option<String>,
    /// Descending comma-separated penalty values.
    #[arg(long)]
    gamma_grid: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Allow non-decomposable interaction graphs.
    #[arg(long)]
    allow_nondecomposable: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
struct SamplerArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    draws: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    beta_prior_var: Option<f64>,
    #[arg(long)]
    aux_components: Option<usize>,
    #[arg(long)]
    fixed_m: Option<f64>,
    /// Hold the fixed effects at their ML estimate.
    #[arg(long)]
    empirical_bayes: bool,
    /// Parallel chains, pooled in seed order.
    #[arg(long)]
    chains: Option<usize>,
    /// `gamma`, `gaussian` or `none` (no random effects).
    #[arg(long)]
    base: Option<String>,
}

#[derive(Debug, Args)]
struct FitDpArgs {
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Store draws for every active cell instead of sample uniques only.
    #[arg(long)]
    track_all: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RiskArgs {
    #[arg(long)]
    table: PathBuf,
    /// Draw matrix written by `fit-dp`; the sampler runs when absent.
    #[arg(long)]
    from_draws: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SelectArgs {
    #[arg(long)]
    table: PathBuf,
    /// Starting model for the path search.
    #[arg(long)]
    model: Option<String>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long)]
    gamma_grid: Option<String>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Consecutive C1 declines that stop the search.
    #[arg(long)]
    patience: Option<usize>,
    /// Also score parametric counterparts (never candidates).
    #[arg(long)]
    report_parametric: bool,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `selection.json` or `risk.json`.
    #[arg(long)]
    input: PathBuf,
}

/// Error with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<dprisk::Error> for CliError {
    fn from(e: dprisk::Error) -> Self {
        use dprisk::Error as E;
        let code = match &e {
            E::Degenerate(_) => 3,
            E::Numeric(_) | E::NonFinite { .. } => 4,
            _ => 2,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = config::RunConfig::load(cli.config.as_deref())
        .and_then(|cfg| commands::dispatch(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
