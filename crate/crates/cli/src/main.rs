//! `dnmf`: train, apply, evaluate and benchmark regularized NMF models.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dnmf_core::data::synth::Noise;
use dnmf_core::Error;

#[derive(Debug, Parser)]
#[command(name = "dnmf", version, about = "Regularized NMF by multiplicative updates and unrolled networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic catalog (V.csv) with ground truth (W.csv, H.csv) and metadata.json.
    Generate(GenerateArgs),
    /// Train a network and write checkpoint.json, model.json and trace.csv.
    Train(TrainArgs),
    /// Estimate exposures H for a catalog with a trained model or a fixed dictionary.
    Infer(InferArgs),
    /// Cross-validated comparison of the network against multiplicative updates.
    Eval(EvalArgs),
    /// Time network inference against multiplicative-update inference.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Supervised,
    Unsupervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Dnmf,
    Mu,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    None,
    Poisson,
}

impl From<NoiseArg> for Noise {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::None => Noise::None,
            NoiseArg::Poisson => Noise::Poisson,
        }
    }
}

/// Catalog location plus optional ground-truth sidecars. A directory input
/// picks up `V.csv`, `W.csv` and `H.csv` from inside it.
#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Ground-truth exposures (signatures x samples).
    #[arg(long)]
    pub truth_h: Option<PathBuf>,
    /// Ground-truth signatures (categories x signatures).
    #[arg(long)]
    pub truth_w: Option<PathBuf>,
    /// Require the 96 substitution-category rows.
    #[arg(long)]
    pub sbs96: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 96)]
    pub f: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = NoiseArg::None)]
    pub noise: NoiseArg,
    #[arg(long, default_value_t = 100.0)]
    pub mutations_per_sample: f64,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Supervised)]
    pub mode: ModeArg,
    /// Rank; defaults to the ground-truth rank.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    /// Penalty weight for both λ₁ and λ₂ (unsupervised only; supervised learns them).
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Resume from a checkpoint instead of the default initialization.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Trained network (model.json or checkpoint.json).
    #[arg(long, conflicts_with = "dictionary", required_unless_present = "dictionary")]
    pub model: Option<PathBuf>,
    /// Fixed signatures for multiplicative-update inference.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Supervised)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    pub method: MethodArg,
    /// Comma-separated penalty weights.
    #[arg(long, alias = "lambda", value_delimiter = ',', default_value = "0")]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Multiplicative-update restarts during training.
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Catalog to time on; when absent a synthetic one is generated.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Signatures; defaults to the ground truth or a multiplicative-update fit.
    #[arg(long)]
    pub dictionary: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub layers: usize,
    #[arg(long, default_value_t = 10)]
    pub short_iters: usize,
    #[arg(long, default_value_t = 100)]
    pub long_iters: usize,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_IO: u8 = 5;

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => EXIT_USAGE,
        Error::Io(_) => EXIT_IO,
        Error::Numeric { .. } | Error::IterationLimit { .. } => EXIT_NUMERIC,
        Error::Dimension { .. }
        | Error::NegativeEntry { .. }
        | Error::DegenerateDictionary { .. }
        | Error::State(_)
        | Error::Parse { .. }
        | Error::NegativeCount { .. }
        | Error::RowCount { .. }
        | Error::Json(_)
        | Error::Csv(_) => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DNMF_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
