//! `proteoknight`: encode protein sequences as walk images, train and
//! evaluate the classifier, and run Monte Carlo dropout uncertainty reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Failure;

#[derive(Debug, Parser)]
#[command(
    name = "proteoknight",
    version,
    about = "Walk-image protein classification with dropout uncertainty"
)]
struct Cli {
    /// TOML settings file (flat key = value); flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render FASTA records to PNGs plus index.tsv and lengths.tsv.
    Encode(EncodeArgs),
    /// Stratified train/test split and length categories.
    Split(SplitArgs),
    /// Train the classifier on an index file.
    Train(TrainArgs),
    /// Accuracy, precision, recall, specificity and F1 on a test index.
    Eval(EvalArgs),
    /// Class probabilities for individual images.
    Predict(PredictArgs),
    /// Monte Carlo dropout analysis per length category.
    Mcd(McdArgs),
    /// Rebuild reports and histograms from a predictions file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub fasta: PathBuf,
    /// `id<TAB>label` lines; ids without an entry get label `unknown`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Image side length in pixels [default: 512].
    #[arg(long)]
    pub size: Option<u32>,
    /// Step length per residue [default: 15].
    #[arg(long)]
    pub radius: Option<f64>,
    /// Disk radius of each stamp [default: 2].
    #[arg(long)]
    pub point_size: Option<u32>,
    /// Worker threads, 0 for one per core [default: 0].
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Fail on missing manifest entries or any per-record error.
    #[arg(long)]
    pub strict: bool,
    /// Non-standard residues: `skip` drops them, `strict` rejects the record [default: skip].
    #[arg(long)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// Defaults to lengths.tsv beside the index.
    #[arg(long)]
    pub lengths: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// [default: 0.2]
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// PVP records with length <= this are short [default: 350].
    #[arg(long)]
    pub delta_pvp: Option<usize>,
    /// Non-PVP records with length <= this are short [default: 275].
    #[arg(long)]
    pub delta_nonpvp: Option<usize>,
    /// Choose each threshold to balance short and long counts.
    #[arg(long)]
    pub auto_delta: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training index (from `split`).
    #[arg(long)]
    pub train: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// [default: 25]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 0.001]
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Dropout rate after the hidden layer [default: 0.2].
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Images are area-averaged to this side before the network [default: 64].
    #[arg(long)]
    pub input_size: Option<usize>,
    /// `sgd` or `adam` [default: sgd].
    #[arg(long)]
    pub optimizer: Option<String>,
    /// `binary` (PVP vs non-PVP) or `multiclass` (PVP subclasses) [default: binary].
    #[arg(long)]
    pub classes: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test index (from `split`).
    #[arg(long)]
    pub test: PathBuf,
    /// Positive iff P(PVP) exceeds this [default: 0.5].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write `metric,value` CSV here.
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub image: Vec<PathBuf>,
    /// Stochastic passes; 0 means one deterministic pass [default: 0].
    #[arg(long)]
    pub passes: Option<usize>,
    /// Dropout rate for stochastic passes [default: the model's rate].
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct McdArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Index of candidate records, usually the test split.
    #[arg(long)]
    pub records: PathBuf,
    /// Defaults to categories.tsv beside the records index.
    #[arg(long)]
    pub categories: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Stochastic passes per sample [default: 100].
    #[arg(long)]
    pub passes: Option<usize>,
    /// Comma-separated dropout rates [default: 0.1,0.2,0.3].
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<f64>>,
    /// [default: 100]
    #[arg(long)]
    pub samples_per_category: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Histogram bins [default: 10].
    #[arg(long)]
    pub bins: Option<usize>,
    /// Worker threads, 0 for one per core [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// [default: 10]
    #[arg(long)]
    pub bins: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
        Err(_) => ExitCode::from(3),
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let file = config::FileConfig::load(cli.config.as_deref()).map_err(Failure::Usage)?;
    match &cli.command {
        Command::Encode(a) => commands::encode(a, &file),
        Command::Split(a) => commands::split(a, &file),
        Command::Train(a) => commands::train(a, &file),
        Command::Eval(a) => commands::eval(a, &file),
        Command::Predict(a) => commands::predict(a, &file),
        Command::Mcd(a) => commands::mcd(a, &file),
        Command::Report(a) => commands::report(a, &file),
    }
}
