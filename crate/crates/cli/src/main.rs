mod analyze;
mod diagnose;
mod fit;
mod run;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};


#[derive(Parser)]
#[command(name = "hnirm", version, about = "Hierarchical network item response models for multilevel survey data")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to a response file.
    Fit(FitArgs),
    /// Generate a synthetic dataset with known parameters.
    Simulate(SimulateArgs),
    /// Summaries, clusters, embeddings and plots from a fit directory.
    Analyze(AnalyzeArgs),
    /// Trace, autocorrelation and acceptance tables from a fit directory.
    Diagnose(DiagnoseArgs),
}

#[derive(Args)]
pub struct FitArgs {
    /// Response CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `single` or `by_label`.
    #[arg(long)]
    pub groups: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for the per-school updates.
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long)]
    pub n_iter: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Tune jump scales during burn-in.
    #[arg(long)]
    pub adapt: bool,
    /// `wide` or `long`.
    #[arg(long, default_value = "wide")]
    pub format: String,
    /// `auto`, `binary` or `likert:CUT`; `auto` picks binary when every code is 0 or 1.
    #[arg(long, default_value = "auto")]
    pub scale: String,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long = "M", default_value_t = 6)]
    pub schools: usize,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    /// Number of school groups.
    #[arg(long, default_value_t = 1)]
    pub groups: usize,
    /// Comma-separated intercept shift per group.
    #[arg(long, value_delimiter = ',')]
    pub gamma_shift: Vec<f64>,
    /// Fixes every item intercept.
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// Directory written by `fit`.
    #[arg(long)]
    pub samples: PathBuf,
    /// Output directory; defaults to `<samples>/analysis`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub item_clusters: usize,
    /// `0` skips school clustering.
    #[arg(long, default_value_t = 2)]
    pub school_clusters: usize,
    /// `delta`, `mu` or `both`.
    #[arg(long, default_value = "both")]
    pub school_space: String,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// School centre in the pooled space: `mean` or `median`.
    #[arg(long, default_value = "mean")]
    pub aggregate: String,
    /// Response file for the pooled school space; defaults to the one in the manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed for k-means restarts.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Output directory; defaults to `<samples>/diagnostics`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    let res = match cli.command {
        Command::Fit(a) => fit::run(&a),
        Command::Simulate(a) => simulate::run(&a),
        Command::Analyze(a) => analyze::run(&a),
        Command::Diagnose(a) => diagnose::run(&a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
