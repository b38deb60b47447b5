//! `umr`: command-line driver for the enhancement-augmented retrieval pipeline.
//!
//! Artifacts flow one way: `synth gen` → `enhance` → `train` → `embed` →
//! `index` → `eval` → `report`. Every command writes only under `--out` and
//! echoes its effective configuration there as `config.lock.json`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use umr_core::eval::AblationMode;

#[derive(Debug, Parser)]
#[command(
    name = "umr",
    version,
    about = "Enhancement-augmented multimodal retrieval pipeline"
)]
struct Cli {
    /// JSON config with sections data, gateway, embedder, train, eval, synth.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic benchmark generation and the mock enhancer server.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Enhance corpus documents or queries through a chat-completions gateway.
    Enhance(EnhanceArgs),
    /// Train the two-tower model for an ablation mode.
    Train(TrainArgs),
    /// Embed one candidate pool with a trained model.
    Embed(EmbedArgs),
    /// Build a search index from an embeddings file.
    Index(IndexArgs),
    /// Evaluate a model on the test split and write a recall report.
    Eval(EvalArgs),
    /// Render a report, optionally as a delta against another report.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Generate a world and write it out as a benchmark.
    Gen(SynthGenArgs),
    /// Serve the mock enhancer for a generated benchmark until interrupted.
    Serve(SynthServeArgs),
}

#[derive(Debug, Args)]
struct SynthGenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_entities: Option<usize>,
    #[arg(long)]
    distractors: Option<usize>,
    #[arg(long)]
    caption_noise: Option<f64>,
    #[arg(long)]
    deixis_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct SynthServeArgs {
    /// Answer file written by `synth gen`.
    #[arg(long)]
    answers: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8000")]
    bind: String,
    /// Reply 503 to the first N completions.
    #[arg(long, default_value_t = 0)]
    fail_first: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SideArg {
    Corpus,
    Queries,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    #[arg(value_enum)]
    side: SideArg,
    /// A benchmark manifest, or a corpus / query JSONL file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Task registry, required when `--in` is a query file.
    #[arg(long)]
    tasks: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Gateway base URL; the request goes to `<endpoint>/chat/completions`.
    #[arg(long, conflicts_with = "mock_world")]
    endpoint: Option<String>,
    /// Answer file of a synthetic benchmark; uses the in-process mock enhancer.
    #[arg(long)]
    mock_world: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Benchmark manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    enhanced_corpus: Option<PathBuf>,
    #[arg(long)]
    enhanced_queries: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Baseline,
    QOnly,
    COnly,
    Full,
    InferenceOnly,
}

impl From<ModeArg> for AblationMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => AblationMode::Baseline,
            ModeArg::QOnly => AblationMode::QOnly,
            ModeArg::COnly => AblationMode::COnly,
            ModeArg::Full => AblationMode::Full,
            ModeArg::InferenceOnly => AblationMode::InferenceOnly,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    hard_negatives: Option<usize>,
    #[arg(long)]
    symmetric: bool,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Pool to embed.
    #[arg(long)]
    pool: String,
    /// Use the enhanced corpus records.
    #[arg(long)]
    enhanced: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IndexArgs {
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Defaults to baseline: no enhancement on either side.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// `report.json` written by `eval`.
    #[arg(long)]
    report: PathBuf,
    /// Render `report − against` instead of the report itself.
    #[arg(long)]
    against: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: FormatArg,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
