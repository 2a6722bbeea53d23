use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use commands::Outcome;

/// Demand estimation and counterfactuals with fixed prices and unobserved
/// nested assortments.
#[derive(Parser, Debug)]
#[command(name = "foldmenu", version, about)]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic panel and its ground truth.
    Simulate(SimulateArgs),
    /// Estimate theta and tier effects from a panel.
    Estimate(EstimateArgs),
    /// Counterfactuals at a prior estimate.
    Analyze(AnalyzeArgs),
    /// Assortment competition equilibrium and random-coefficient loss.
    Compete(CompeteArgs),
    /// Fit log-normal income parameters to income quintile means.
    FitIncome(FitIncomeArgs),
    /// Wholesale margins from tax and margin rates.
    Margins(MarginsArgs),
}

#[derive(clap::Args, Debug)]
pub struct SimulateArgs {
    /// TOML file with a `[dgp]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub markets: Option<usize>,
    /// Assortment rule of the true process.
    #[arg(long, value_enum)]
    pub assortment: Option<AssortmentArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AssortmentArg {
    Foldable,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelArg {
    Foldable,
    Standard,
}

#[derive(clap::Args, Debug)]
pub struct EstimateArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with an `[estimation]` table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "foldable")]
    pub model: ModelArg,
    /// Bootstrap replications for the theta standard error.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(clap::Args, Debug)]
pub struct AnalyzeArgs {
    /// `estimate.json` written by `estimate`.
    #[arg(long)]
    pub estimate: PathBuf,
    /// Panel the estimate was fit on.
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub elasticities: bool,
    /// Tax increases in percent, e.g. `5,10,15,20`.
    #[arg(long, value_delimiter = ',')]
    pub tax: Vec<f64>,
    #[arg(long)]
    pub full_availability: bool,
    #[arg(long)]
    pub assortment_dist: bool,
    /// Uniform price change in percent.
    #[arg(long, allow_hyphen_values = true)]
    pub uniform_price: Option<f64>,
}

#[derive(clap::Args, Debug)]
pub struct CompeteArgs {
    /// Scenario TOML listing firms and their products.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Random-coefficient dispersion and draw count, `a,n`.
    #[arg(long, value_delimiter = ',', value_name = "A,N")]
    pub random_coef: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss sweep over points of sale built from this `estimate.json`.
    #[arg(long, requires = "panel")]
    pub fitted: Option<PathBuf>,
    #[arg(long)]
    pub panel: Option<PathBuf>,
    /// Sweep dispersions.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,5")]
    pub dispersions: Vec<f64>,
    /// Sweep draw counts.
    #[arg(long, value_delimiter = ',', default_value = "1000,2000")]
    pub draws: Vec<usize>,
    /// Points of sale drawn per market for the fitted sweep.
    #[arg(long, default_value_t = 2)]
    pub per_market: usize,
    /// Run the sweep on the scenario itself.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(clap::Args, Debug)]
pub struct FitIncomeArgs {
    /// CSV with columns market_id,q1..q5.
    #[arg(long)]
    pub quintiles: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(clap::Args, Debug)]
pub struct MarginsArgs {
    /// TOML file with `[[rows]]` of tax parameters and a `label`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    fn out_dir(&self) -> &PathBuf {
        match self {
            Command::Simulate(a) => &a.out,
            Command::Estimate(a) => &a.out,
            Command::Analyze(a) => &a.out,
            Command::Compete(a) => &a.out,
            Command::FitIncome(a) => &a.out,
            Command::Margins(a) => &a.out,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are input errors; exit code 2 is reserved for numerical failures.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: could not configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let out = cli.command.out_dir().clone();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Analyze(a) => commands::analyze(&a),
        Command::Compete(a) => commands::compete(&a),
        Command::FitIncome(a) => commands::fit_income(&a),
        Command::Margins(a) => commands::margins(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            match commands::classify(&err, &out) {
                Outcome::Input => ExitCode::from(1),
                Outcome::Numerical => ExitCode::from(2),
            }
        }
    }
}
