//! Command line front end: `train`, `eval`, `bench`, and `synth`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "heron",
    version,
    about = "Topic model inference: collapsed Gibbs, Poisson state augmentation, and deterministic fixed-point sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model and write theta/phi, a convergence trace, and a manifest.
    Train(TrainArgs),
    /// Evaluate trained artifacts: perplexity and topic coherence.
    Eval(EvalArgs),
    /// Run a backend/K/batch grid and emit a long-format CSV.
    Bench(BenchArgs),
    /// Generate a synthetic corpus file from the generative process.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Corpus file path.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Corpus format: bow-text | tuple-csv.
    #[arg(long)]
    pub format: Option<String>,
    /// Model: lda | rtm | slda.
    #[arg(long)]
    pub model: Option<String>,
    /// Backend: cgs | same | heron.
    #[arg(long)]
    pub backend: Option<String>,
    /// Number of topics.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Link weight (rtm) or regression weight (slda), expanded per topic.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Regression intercept (slda).
    #[arg(long)]
    pub a: Option<f64>,
    /// Replication count for the state-augmentation backend.
    #[arg(long)]
    pub m: Option<u32>,
    /// Number of batches per iteration (heron).
    #[arg(long)]
    pub batches: Option<usize>,
    /// Batch semantics: jacobi | minibatch.
    #[arg(long)]
    pub batch_mode: Option<String>,
    /// Moving-average theta estimate: on | off.
    #[arg(long)]
    pub moving_average: Option<String>,
    /// Train fraction in (0,1); when set, the held-out side is written to
    /// `<out>/test.tuples` and training uses the rest.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sweeps (samplers) or max iterations (heron).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Convergence tolerance on the KL criterion (heron).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Fixed-point damping factor in [0,1).
    #[arg(long)]
    pub damping: Option<f64>,
    /// Parallel frozen-snapshot sweep for the state-augmentation backend
    /// (an approximation, recorded in the manifest): on | off.
    #[arg(long)]
    pub same_parallel: Option<String>,
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory containing theta.csv and phi.csv (a train output dir).
    #[arg(long)]
    pub artifacts: PathBuf,
    /// Evaluation corpus (held-out split for perplexity; also the
    /// co-occurrence reference for coherence).
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "tuple-csv")]
    pub format: String,
    /// Top-word counts to evaluate coherence at.
    #[arg(long, value_delimiter = ',', default_value = "20,50")]
    pub top_n: Vec<usize>,
    /// Coherence smoothing constant.
    #[arg(long, default_value_t = 1e-12)]
    pub smoothing: f64,
    /// Output directory for eval.json / eval.csv (defaults to artifacts).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "tuple-csv")]
    pub format: String,
    /// Backends to sweep.
    #[arg(long, value_delimiter = ',', default_value = "cgs,same,heron")]
    pub backends: Vec<String>,
    /// Topic counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "10,25")]
    pub k: Vec<usize>,
    /// Batch counts to sweep (heron only; samplers ignore it).
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub batches: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    #[arg(long, default_value_t = 100)]
    pub m: u32,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train fraction used to hold out a perplexity test set.
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Parallel frozen-snapshot sweep for the state-augmentation backend.
    #[arg(long, default_value_t = false)]
    pub same_parallel: bool,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub docs: usize,
    #[arg(long, default_value_t = 500)]
    pub vocab: usize,
    /// Planted topic count.
    #[arg(long, default_value_t = 10)]
    pub topics: usize,
    #[arg(long, default_value_t = 20)]
    pub len_min: u32,
    #[arg(long, default_value_t = 60)]
    pub len_max: u32,
    /// Dirichlet concentration of document-topic mixtures.
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Dirichlet concentration of topic-word distributions.
    #[arg(long, default_value_t = 0.05)]
    pub beta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Attach per-document labels (for slda runs).
    #[arg(long, default_value_t = false)]
    pub labels: bool,
    /// Output tuple-csv path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Command failure, classified for the exit code.
#[derive(Debug)]
pub enum CmdError {
    Config(String),
    Runtime(String),
}

impl CmdError {
    fn exit_code(&self) -> u8 {
        match self {
            CmdError::Config(_) => 2,
            CmdError::Runtime(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CmdError::Config(m) | CmdError::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::run_train(&args),
        Command::Eval(args) => commands::run_eval(&args),
        Command::Bench(args) => commands::run_bench(&args),
        Command::Synth(args) => commands::run_synth(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            ExitCode::from(err.exit_code())
        }
    }
}
