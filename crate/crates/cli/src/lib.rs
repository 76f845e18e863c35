//! Command-line pipeline and HTTP service for the outfit-compatibility engine.

pub mod commands;
pub mod http;
pub mod service;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use stylerec::catalog::{Slot, Split};
use stylerec::eval::Metric;
use stylerec::ScorerKind;

#[derive(Debug, Parser)]
#[command(name = "stylerec", version, about = "Outfit compatibility from curated outfits")]
pub struct Cli {
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, clean, window and split a raw outfit corpus.
    Ingest(IngestArgs),
    /// Generate a synthetic corpus with planted style clusters.
    Synth(SynthArgs),
    /// Train the pair model.
    TrainPair(TrainPairArgs),
    /// Train attention logits over a frozen pair model.
    TrainAttention(TrainAttentionArgs),
    /// Evaluate a scorer on a split and write a metric report.
    Eval(EvalArgs),
    /// Compose outfits by beam search.
    Generate(GenerateArgs),
    /// Write the model file and an embedding TSV.
    Export(ExportArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Dump training batches or outfit samples as JSON lines.
    SampleDump(SampleDumpArgs),
}

/// A corpus file together with its split manifest.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Split manifest written by `ingest` or `synth`.
    #[arg(long)]
    pub splits: PathBuf,
}

fn parse_fractions(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(parts).map_err(|_| "expected three comma-separated fractions".to_owned())
}

/// Split options shared by `ingest` and `synth`.
#[derive(Debug, Clone, Args)]
pub struct SplitOptions {
    /// Outfits per time window.
    #[arg(long, default_value_t = 1000)]
    pub window_size: usize,
    /// Train, validation and test fractions of windows.
    #[arg(long, default_value = "0.8,0.1,0.1", value_parser = parse_fractions)]
    pub fractions: [f64; 3],
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Canonical corpus output.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub splits: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub min_frequency: usize,
    #[command(flatten)]
    pub split: SplitOptions,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    /// Truth sidecar with hidden clusters and style vectors.
    #[arg(long)]
    pub truth: PathBuf,
    /// Also write a split manifest for the corpus.
    #[arg(long)]
    pub splits: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitOptions,
    #[arg(long, default_value_t = 400)]
    pub products: usize,
    #[arg(long, default_value_t = 20_000)]
    pub outfits: usize,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 8)]
    pub slots: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 4)]
    pub min_size: usize,
    #[arg(long, default_value_t = 6)]
    pub max_size: usize,
    /// Sampling temperature over style similarity; `inf` ignores style.
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.1)]
    pub style_noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub popularity_exponent: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Subsampling threshold; `None` disables subsampling.
pub type Rho = Option<f64>;

fn parse_rho(s: &str) -> Result<Rho, String> {
    if s == "none" {
        return Ok(None);
    }
    match s.parse::<f64>() {
        Ok(r) if r > 0.0 => Ok(Some(r)),
        _ => Err(format!("{s:?} is neither a positive number nor \"none\"")),
    }
}

#[derive(Debug, Args)]
pub struct TrainPairArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: Split,
    /// Embedding dimension.
    #[arg(long, default_value_t = 40)]
    pub m: usize,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Negative pairs per positive pair.
    #[arg(long, default_value_t = 80)]
    pub negatives: usize,
    /// Subsampling threshold, or `none` to keep every pair.
    #[arg(long, default_value = "0.0002", value_parser = parse_rho)]
    pub rho: Rho,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Draw negatives uniformly instead of by window frequency.
    #[arg(long)]
    pub uniform_negatives: bool,
    /// Scale each outfit's updates by one over its size.
    #[arg(long)]
    pub weight_by_outfit_size: bool,
}

#[derive(Debug, Args)]
pub struct TrainAttentionArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub pair_model: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "train")]
    pub split: Split,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    /// Negative queries per outfit sample.
    #[arg(long, default_value_t = 19)]
    pub negatives: usize,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub uniform_negatives: bool,
}

/// Model files shared by the scoring subcommands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub pair_model: PathBuf,
    #[arg(long)]
    pub attention_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value = "mean")]
    pub model: ScorerKind,
    /// Metrics to compute: top2, hit, fitb, aps.
    #[arg(long, value_delimiter = ',', default_value = "top2,hit,fitb,aps")]
    pub metric: Vec<Metric>,
    /// FITB candidate counts.
    #[arg(long, value_delimiter = ',', default_value = "4,10")]
    pub n: Vec<usize>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub max_instances: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, default_value = "mean")]
    pub model: ScorerKind,
    #[arg(long, default_value_t = 20)]
    pub beam_width: usize,
    /// Comma-separated slots; defaults to jacket,suit,shirt,trouser,shoes,belt
    /// restricted to slots the window stocks.
    #[arg(long, value_delimiter = ',')]
    pub slot_order: Option<Vec<Slot>>,
    /// Window whose stock is used; defaults to the latest.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub pair_model: PathBuf,
    /// Embedding TSV output.
    #[arg(long)]
    pub tsv: PathBuf,
    /// Re-written model file.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub pair_model: Option<PathBuf>,
    #[arg(long)]
    pub attention_model: Option<PathBuf>,
    #[arg(long, env = http::ADDR_ENV, default_value = http::DEFAULT_ADDR)]
    pub addr: String,
    #[arg(long, default_value = "mean")]
    pub default_model: ScorerKind,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DumpKind {
    Pairs,
    Outfits,
}

#[derive(Debug, Args)]
pub struct SampleDumpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub kind: DumpKind,
    /// Window to sample from.
    #[arg(long, default_value_t = 0)]
    pub window: usize,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long, default_value = "0.0002", value_parser = parse_rho)]
    pub rho: Rho,
    /// Outfits to sample.
    #[arg(long, default_value_t = 10)]
    pub limit: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub use commands::run;
