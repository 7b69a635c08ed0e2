// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use bayes_procova::{ErrorKind, HcVariant};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "procova", version, about = "Bayesian prognostic covariate adjustment")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, env = "PROCOVA_SEED")]
    seed: Option<u64>,

    /// Worker threads for replicate-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the mixture prior and run the Gibbs sampler on a trial dataset.
    Analyze(AnalyzeArgs),
    /// Run simulation scenarios from a TOML or JSON file.
    Simulate(SimulateArgs),
    /// Choose the K scaling γ that keeps the type I error under a target.
    Calibrate(CalibrateArgs),
    /// Prior effective sample size of a mixture prior.
    PriorEss(PriorEssArgs),
    /// Simulation-based calibration of the sampler under a given prior.
    Sbc(SbcArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum K0Choice {
    #[value(name = "inverse_N")]
    InverseN,
    #[value(name = "inverse_sqrt_N")]
    InverseSqrtN,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum HcChoice {
    #[value(name = "HC0")]
    Hc0,
    #[value(name = "HC1")]
    Hc1,
    #[value(name = "HC3")]
    Hc3,
}

impl From<HcChoice> for HcVariant {
    fn from(c: HcChoice) -> Self {
        match c {
            HcChoice::Hc0 => HcVariant::HC0,
            HcChoice::Hc1 => HcVariant::HC1,
            HcChoice::Hc3 => HcVariant::HC3,
        }
    }
}

/// Hyperparameter overrides; unset flags keep the defaults or the values of
/// a supplied prior file.
#[derive(Args, Debug, Clone)]
struct PriorFlags {
    /// How K₀,H is set from the historical sample size.
    #[arg(long, value_enum, default_value = "inverse_N")]
    k0_mode: K0Choice,
    /// Explicit K₀,H (overrides --k0-mode).
    #[arg(long)]
    k0: Option<f64>,
    /// Prior variance scale of the treatment effect in the informative component.
    #[arg(long)]
    k1: Option<f64>,
    /// Explicit K₂,H (overrides --k0-mode).
    #[arg(long)]
    k2: Option<f64>,
    /// Prior variance scale of the flat component.
    #[arg(long)]
    k: Option<f64>,
    /// Degrees of freedom of the flat component's σ² prior.
    #[arg(long)]
    nu0: Option<f64>,
    /// Scale of the flat component's σ² prior.
    #[arg(long)]
    sigma0_sq: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    trial: PathBuf,
    /// Historical controls (columns y, m). Needed unless --prior is given.
    #[arg(long)]
    historical: Option<PathBuf>,
    /// Mixture prior JSON, e.g. written by `calibrate --prior-out`.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[command(flatten)]
    prior_flags: PriorFlags,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    /// Independent chains, pooled after burn-in.
    #[arg(long, default_value_t = 1)]
    chains: usize,
    #[arg(long, default_value_t = 0.5)]
    omega_init: f64,
    /// Hold ω at this value instead of sampling it.
    #[arg(long)]
    omega_fixed: Option<f64>,
    #[arg(long, value_enum, default_value = "HC1")]
    hc: HcChoice,
    #[arg(long, default_value = "y")]
    y_col: String,
    #[arg(long, default_value = "w")]
    w_col: String,
    #[arg(long, default_value = "m")]
    m_col: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export the first chain as CSV.
    #[arg(long)]
    chain_csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario file: one scenario, or a `scenario` array of them.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Override the replicate count of every scenario.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long)]
    historical: PathBuf,
    #[arg(long)]
    trial_n: usize,
    /// Candidate γ values, comma separated.
    #[arg(long, value_delimiter = ',')]
    gamma_grid: Vec<f64>,
    /// Largest acceptable type I error rate over all shifts.
    #[arg(long, default_value_t = 0.1)]
    target_alpha: f64,
    /// Largest bias shift, in units of √Var(Δ).
    #[arg(long, default_value_t = 4.0)]
    shift_sd_max: f64,
    /// Number of evenly spaced shifts from 0 to the maximum.
    #[arg(long, default_value_t = 5)]
    shift_steps: usize,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0.5)]
    rand_prob: f64,
    #[command(flatten)]
    prior_flags: PriorFlags,
    /// Write the calibrated mixture prior as JSON.
    #[arg(long)]
    prior_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PriorEssArgs {
    #[arg(long)]
    prior: PathBuf,
    #[arg(long)]
    omega: f64,
    /// Residual variance estimate.
    #[arg(long)]
    s_sq: f64,
}

#[derive(Args, Debug)]
struct SbcArgs {
    #[arg(long)]
    prior: PathBuf,
    /// Trial size of each simulated dataset.
    #[arg(long, default_value_t = 25)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    replications: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    /// Run the deliberately miscalibrated sampler (halved σ² scale).
    #[arg(long)]
    corrupt: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = bayes_procova::exec::init_thread_pool(t) {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let seed = cli.seed.unwrap_or(0);
    let result = match cli.command {
        Command::Analyze(a) => commands::analyze(a, seed),
        Command::Simulate(a) => commands::simulate(a, cli.seed),
        Command::Calibrate(a) => commands::calibrate(a, seed),
        Command::PriorEss(a) => commands::prior_ess(a),
        Command::Sbc(a) => commands::sbc(a, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Failure of a command, carrying its exit-code class.
#[derive(Debug)]
pub enum CliError {
    Core(bayes_procova::Error),
    Config(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Io => 1,
                ErrorKind::Validation => 2,
                ErrorKind::Numerical => 3,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<bayes_procova::Error> for CliError {
    fn from(e: bayes_procova::Error) -> Self {
        CliError::Core(e)
    }
}
