//! `hopmix` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::CliError;

#[derive(Parser, Debug)]
#[command(name = "hopmix", version, about = "Hierarchical multi-hop dense retrieval over long documents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert tables, papers or documents into the JSON Lines document format.
    Ingest(IngestArgs),
    /// Embed documents and queries with the deterministic toy encoder.
    Embed(EmbedArgs),
    /// Build one index file per document.
    Index(IndexArgs),
    /// Train mixing parameters from a labeled query set.
    Train(TrainArgs),
    /// Retrieve and rank evidence for every query.
    Retrieve(RetrieveArgs),
    /// Score predictions, or a fresh retrieval run, against gold labels.
    Eval(EvalArgs),
    /// Generate a synthetic planted-chain dataset.
    Synth(SynthArgs),
    /// Measure hop-pipeline throughput on a random index.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Documents,
    Tables,
    Papers,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Agnostic,
    Deferred,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "documents")]
    pub format: InputFormat,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub docs: PathBuf,
    /// Query set whose units are embedded too.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long)]
    pub output: PathBuf,
}

/// Where vectors come from: an embedding file, or the toy encoder.
#[derive(Args, Debug, Clone)]
pub struct VectorSource {
    #[arg(long)]
    pub docs: PathBuf,
    /// Embedding file; without it the toy encoder of dimension `--dim` is used.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, value_enum, default_value = "agnostic")]
    pub regime: RegimeArg,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[command(flatten)]
    pub source: VectorSource,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Hop-loop settings shared by training and retrieval.
#[derive(Args, Debug, Clone)]
pub struct HopArgs {
    /// Number of hops; defaults to the number of query units.
    #[arg(long)]
    pub hops: Option<usize>,
    /// Per-hop entry filter, comma separated: paragraph, sentence or any.
    #[arg(long)]
    pub mask: Option<String>,
    /// Disable the residual query update.
    #[arg(long)]
    pub no_update: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub source: VectorSource,
    #[command(flatten)]
    pub hop: HopArgs,
    /// Training set (JSON Lines).
    #[arg(long)]
    pub train: PathBuf,
    /// Checkpoint to start from; random initialization otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value = "marginal", value_parser = ["marginal", "sumce"])]
    pub multi_positive: String,
}

#[derive(Args, Debug, Clone)]
pub struct RankArgs {
    #[arg(long, default_value_t = 1.5)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 3.0)]
    pub lambda2: f64,
    /// Ranked sentences kept per query.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub source: VectorSource,
    #[command(flatten)]
    pub hop: HopArgs,
    #[command(flatten)]
    pub rank: RankArgs,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Predictions output; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write per-hop traces to this file.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Documents; required unless `--predictions` is given.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    /// Gold query set.
    #[arg(long)]
    pub queries: PathBuf,
    /// Score an existing predictions file instead of running retrieval.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, value_enum, default_value = "agnostic")]
    pub regime: RegimeArg,
    #[command(flatten)]
    pub hop: HopArgs,
    #[command(flatten)]
    pub rank: RankArgs,
    /// Also report easy/strict classification accuracy.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n_docs: usize,
    #[arg(long, default_value_t = 10)]
    pub paras: usize,
    #[arg(long, default_value_t = 5)]
    pub sents: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub hops: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 1000)]
    pub paragraphs: usize,
    #[arg(long, default_value_t = 9)]
    pub sents: usize,
    #[arg(long, default_value_t = 128)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub hops: usize,
    #[arg(long, default_value_t = 2000)]
    pub queries: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-hop entry filter; defaults to paragraph then sentences.
    #[arg(long)]
    pub mask: Option<String>,
    /// Run the queries of each batch on the thread pool.
    #[arg(long)]
    pub parallel: bool,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("HOPMIX_THREADS") else { return Ok(()) };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("HOPMIX_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("could not configure threads: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Embed(a) => commands::embed(&a),
        Command::Index(a) => commands::index(&a),
        Command::Train(a) => commands::train(&a),
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Bench(a) => commands::bench(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
