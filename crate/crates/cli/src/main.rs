//! `dnaformer`: generate → cluster → train → eval → report.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "dnaformer",
    version,
    about = "Synthetic DNA-storage read reconstruction pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Force ordered reductions in training.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Config file: an error model for `generate`, a training config for `train`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a corpus of designs and noisy reads.
    Generate(GenerateArgs),
    /// Pseudo-cluster reads by design prefix.
    Cluster(ClusterArgs),
    /// Train a reconstruction model on synthetic clusters.
    Train(TrainArgs),
    /// Reconstruct clusters and score them against the designs.
    Eval(EvalArgs),
    /// Render an eval report as markdown.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Number of designs.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Extra prefix symbols beyond log4(n) that designs must keep distinct.
    #[arg(long, default_value_t = dnaformer_core::cluster::DEFAULT_MARGIN)]
    pub margin: usize,
}

#[derive(Args, Debug)]
pub struct ClusterArgs {
    #[arg(long)]
    pub designs: PathBuf,
    #[arg(long)]
    pub reads: PathBuf,
    /// Ground truth, used only to count misassigned reads.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = dnaformer_core::cluster::DEFAULT_MARGIN)]
    pub margin: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Channel the synthetic training clusters are drawn from.
    #[arg(long)]
    pub error_model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub clusters_per_epoch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub lr_min: Option<f64>,
    #[arg(long)]
    pub lambda_ce: Option<f64>,
    #[arg(long)]
    pub lambda_hamming: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained model; may be omitted when only the baseline is wanted.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub designs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also run the plurality-vote baseline.
    #[arg(long)]
    pub baseline: bool,
    #[arg(long, default_value_t = 32)]
    pub max_copies: usize,
    /// Length slack used without a checkpoint.
    #[arg(long, default_value_t = 8)]
    pub deviation: usize,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// `report.json` written by `eval`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let g = &cli.global;
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(g, a),
        Command::Cluster(a) => commands::cluster(a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::MissingInput>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
