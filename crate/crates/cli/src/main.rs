//! `unitdur` command-line driver.

mod commands;
mod evaluate;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "unitdur", version, about = "Discrete-unit duration modeling and accent simulation")]
struct Cli {
    /// key=value configuration file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a k-means codebook over feature matrices.
    TrainKmeans(TrainKmeansArgs),
    /// Encode feature matrices into unit sequences.
    Encode(EncodeArgs),
    /// Train the unit duration predictor.
    TrainDurpred(TrainDurpredArgs),
    /// Apply a pipeline mode to feature or unit files.
    Simulate(SimulateArgs),
    /// Print run-duration statistics of unit files.
    Stats(StatsArgs),
    /// Prosody and duration correlations of test bundles against references.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic corpus with a known codebook and rhythm.
    GenCorpus(GenCorpusArgs),
}

#[derive(Args)]
pub struct TrainKmeansArgs {
    /// Manifest of FMAT files.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    /// kmeanspp or random.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub max_swaps: Option<usize>,
}

#[derive(Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct TrainDurpredArgs {
    /// Manifest of unit files.
    #[arg(long)]
    pub units: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss TSV; printed to standard output when absent.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub filter_size: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_utterances: Option<usize>,
    #[arg(long)]
    pub max_duration: Option<u32>,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long, conflicts_with = "units", required_unless_present = "units")]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub units: Option<PathBuf>,
    #[arg(long)]
    pub codebook: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// baseline, dedup or dur-mod.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub units: PathBuf,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Rows of `test<TAB>ref[<TAB>ref...]` bundle stems.
    #[arg(long)]
    pub pairs: PathBuf,
    /// cosine, euclidean or symmetric_kl.
    #[arg(long)]
    pub distance: Option<String>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args)]
pub struct GenCorpusArgs {
    /// mora, stress or custom.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub mean: Option<f64>,
    #[arg(long)]
    pub sd: Option<f64>,
    #[arg(long)]
    pub unit_share: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub centroid_scale: Option<f64>,
    #[arg(long)]
    pub noise_sd: Option<f64>,
    #[arg(long)]
    pub min_frames: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Reuse this codebook instead of generating one.
    #[arg(long)]
    pub codebook: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = settings::Settings::load(cli.config.as_deref()).and_then(|s| match cli.command {
        Command::TrainKmeans(a) => commands::train_kmeans(a, &s),
        Command::Encode(a) => commands::encode(a, &s),
        Command::TrainDurpred(a) => commands::train_durpred(a, &s),
        Command::Simulate(a) => commands::simulate(a, &s),
        Command::Stats(a) => commands::stats(a, &s),
        Command::Evaluate(a) => evaluate::evaluate(a, &s),
        Command::GenCorpus(a) => commands::gen_corpus(a, &s),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
