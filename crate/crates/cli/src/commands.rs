//! Subcommand implementations.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use stylerec::catalog::{
    assign_splits, load_corpus, preprocess, save_corpus, window_split, write_corpus, Dataset, Split, SplitManifest,
};
use stylerec::eval::{evaluate, EvalConfig, Metric};
use stylerec::outfit_models::{train_attention, AnyScorer, AttentionTrainConfig};
use stylerec::pair_model::{digest_hex, train};
use stylerec::sampler::{
    dump_batches, dump_outfit_samples, outfit_samples, positive_pairs, NegativeWeighting, PairSampler, SamplerError,
    WindowSampler,
};
use stylerec::synth::{generate_catalog, generate_outfits, save_truth, SynthConfig};
use stylerec::{AttentionModel, Execution, MetricReport, PairModel, ScorerKind, TrainConfig};

use crate::service::{handle_generate, GenerateRequest, ServiceConfig, ServiceState};
use crate::{
    Cli, Command, DataArgs, DumpKind, EvalArgs, ExportArgs, GenerateArgs, IngestArgs, ModelArgs, SampleDumpArgs,
    ServeArgs, SynthArgs, TrainAttentionArgs, TrainPairArgs,
};

pub fn run(cli: Cli) -> Result<()> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a, exec),
        Command::TrainPair(a) => train_pair(a),
        Command::TrainAttention(a) => train_attention_cmd(a),
        Command::Eval(a) => eval(a, exec),
        Command::Generate(a) => generate(a, exec),
        Command::Export(a) => export(a),
        Command::Serve(a) => serve(a, exec),
        Command::SampleDump(a) => sample_dump(a),
    }
}

fn weighting(uniform: bool) -> NegativeWeighting {
    if uniform {
        NegativeWeighting::Uniform
    } else {
        NegativeWeighting::Frequency
    }
}

pub fn load_dataset(data: &DataArgs) -> Result<Dataset> {
    let corpus = load_corpus(&data.corpus)?;
    let manifest = SplitManifest::load(&data.splits)?;
    Dataset::new(corpus, manifest.window_size, manifest.windows)
        .with_context(|| format!("{} does not match {}", data.splits.display(), data.corpus.display()))
}

fn load_pair(path: &Path, dataset: &Dataset) -> Result<PairModel> {
    let model = PairModel::load(path)?;
    if !model.vocabulary().same_products(dataset.vocabulary()) {
        bail!(
            "{}: model vocabulary does not match the corpus vocabulary",
            path.display()
        );
    }
    Ok(model)
}

fn load_models(args: &ModelArgs, dataset: &Dataset) -> Result<(PairModel, Option<AttentionModel>)> {
    let pair = load_pair(&args.pair_model, dataset)?;
    let attention = args.attention_model.as_deref().map(AttentionModel::load).transpose()?;
    Ok((pair, attention))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    bytes
}

fn ingest(a: IngestArgs) -> Result<()> {
    let raw = load_corpus(&a.input)?;
    let (corpus, report) = preprocess(&raw, a.min_frequency, a.seed)?;
    if report.empty_result {
        eprintln!("warning: preprocessing removed every outfit");
    }
    let windows = window_split(&corpus, a.split.window_size)?;
    let splits = assign_splits(windows.len(), a.split.fractions, a.seed)?;
    save_corpus(&corpus, &a.output)?;
    SplitManifest::new(a.split.window_size, a.split.fractions, a.seed, splits).save(&a.splits)?;
    println!(
        "{} outfits, {} products, {} windows; removed {} rare products, deduplicated {} outfits, dropped {}",
        corpus.len(),
        corpus.vocabulary().len(),
        windows.len(),
        report.rare_products_removed,
        report.outfits_deduplicated,
        report.outfits_dropped
    );
    Ok(())
}

fn synth(a: SynthArgs, exec: Execution) -> Result<()> {
    let config = SynthConfig {
        n_products: a.products,
        n_outfits: a.outfits,
        n_clusters: a.clusters,
        n_slots: a.slots,
        d_true: a.dim,
        min_size: a.min_size,
        max_size: a.max_size,
        noise_temperature: a.temperature,
        style_noise: a.style_noise,
        popularity_exponent: a.popularity_exponent,
        seed: a.seed,
    };
    let catalog = generate_catalog(&config)?;
    let out = generate_outfits(&catalog, &config, exec)?;
    save_corpus(&out.corpus, &a.output)?;
    save_truth(&catalog, &a.truth)?;
    if let Some(path) = &a.splits {
        let windows = window_split(&out.corpus, a.split.window_size)?;
        let splits = assign_splits(windows.len(), a.split.fractions, a.seed)?;
        SplitManifest::new(a.split.window_size, a.split.fractions, a.seed, splits).save(path)?;
    }
    println!(
        "{} outfits over {} products",
        out.corpus.len(),
        out.corpus.vocabulary().len()
    );
    Ok(())
}

fn train_pair(a: TrainPairArgs) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let config = TrainConfig {
        dim: a.m,
        n_pair: a.negatives,
        rho: a.rho,
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        negative_weighting: weighting(a.uniform_negatives),
        weight_by_outfit_size: a.weight_by_outfit_size,
        ..TrainConfig::default()
    };
    let windows = dataset.splits.windows_in(a.split);
    if windows.is_empty() {
        bail!("split {:?} has no windows", a.split);
    }
    let (model, history) = train(&dataset, &windows, &config)?;
    for (e, (lp, n)) in history
        .epoch_mean_log_prob
        .iter()
        .zip(&history.batches_per_epoch)
        .enumerate()
    {
        eprintln!("epoch {:>3}: mean log-prob {lp:.6} over {n} batches", e + 1);
    }
    if history.skipped_empty_pool > 0 {
        eprintln!(
            "skipped {} positives with no negative candidates in their window",
            history.skipped_empty_pool
        );
    }
    model.save(&a.output)?;
    println!("{}", model.digest());
    Ok(())
}

fn train_attention_cmd(a: TrainAttentionArgs) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let pair = load_pair(&a.pair_model, &dataset)?;
    let config = AttentionTrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
        n_outfit: a.negatives,
        seed: a.seed,
        negative_weighting: weighting(a.uniform_negatives),
        ..AttentionTrainConfig::default()
    };
    let windows = dataset.splits.windows_in(a.split);
    if windows.is_empty() {
        bail!("split {:?} has no windows", a.split);
    }
    let (model, history) = train_attention(&pair, &dataset, &windows, &config)?;
    for (e, (loss, n)) in history
        .epoch_mean_loss
        .iter()
        .zip(&history.samples_per_epoch)
        .enumerate()
    {
        eprintln!("epoch {:>3}: mean loss {loss:.6} over {n} samples", e + 1);
    }
    model.save(&a.output)?;
    println!("{}", digest_hex(&model.to_json_bytes()));
    Ok(())
}

/// Metric report with the experiment's provenance.
#[derive(Debug, Serialize)]
pub struct EvalReportFile {
    pub format_version: u32,
    pub kind: &'static str,
    pub model: ScorerKind,
    pub split: Split,
    pub windows: Vec<usize>,
    pub metrics: Vec<Metric>,
    pub fitb_sizes: Vec<usize>,
    pub max_instances: Option<usize>,
    pub seed: u64,
    pub corpus_digest: String,
    pub pair_model_digest: String,
    pub attention_model_digest: Option<String>,
    pub skipped_small_stock: usize,
    pub report: MetricReport,
}

fn eval(a: EvalArgs, exec: Execution) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let (pair, attention) = load_models(&a.models, &dataset)?;
    let scorer = AnyScorer::new(a.model, &pair, attention.as_ref())?;
    let windows = dataset.splits.windows_in(a.split);
    if windows.is_empty() {
        bail!("split {:?} has no windows", a.split);
    }
    if a.metric.contains(&Metric::Fitb) && a.n.is_empty() {
        bail!("--metric fitb needs at least one --n");
    }
    let config = EvalConfig {
        metrics: a.metric.clone(),
        fitb_sizes: a.n.clone(),
        max_instances: a.max_instances,
        seed: a.seed,
    };
    let evaluation = evaluate(&scorer, &dataset, &windows, &config, exec)?;
    let mut corpus_bytes = Vec::new();
    write_corpus(&dataset.corpus, &mut corpus_bytes)?;
    let file = EvalReportFile {
        format_version: 1,
        kind: "eval_report",
        model: a.model,
        split: a.split,
        windows,
        metrics: a.metric,
        fitb_sizes: a.n,
        max_instances: a.max_instances,
        seed: a.seed,
        corpus_digest: digest_hex(&corpus_bytes),
        pair_model_digest: pair.digest(),
        attention_model_digest: match a.model {
            ScorerKind::Attention => attention.as_ref().map(|m| digest_hex(&m.to_json_bytes())),
            _ => None,
        },
        skipped_small_stock: evaluation.skipped_small_stock,
        report: evaluation.report,
    };
    write_output(a.output.as_deref(), &pretty(&file))
}

fn generate(a: GenerateArgs, exec: Execution) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let (pair, attention) = load_models(&a.models, &dataset)?;
    let mut state = ServiceState::new(dataset, Some(pair), attention, ServiceConfig::default())?;
    state.exec = exec;
    state.config.max_beam_width = usize::MAX;
    let request = GenerateRequest {
        beam_width: a.beam_width,
        slot_order: a.slot_order,
        window_index: a.window,
        seed: a.seed,
        model: Some(a.model),
    };
    let response = handle_generate(&request, &state)?;
    write_output(a.output.as_deref(), &pretty(&response))
}

fn export(a: ExportArgs) -> Result<()> {
    let model = PairModel::load(&a.pair_model)?;
    match &a.model_out {
        Some(out) => model.export(out, &a.tsv)?,
        None => {
            let file = File::create(&a.tsv).with_context(|| format!("creating {}", a.tsv.display()))?;
            model.write_embedding_tsv(BufWriter::new(file))?;
        }
    }
    println!("{} rows", model.vocabulary().len());
    Ok(())
}

fn serve(a: ServeArgs, exec: Execution) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let pair = a.pair_model.as_deref().map(|p| load_pair(p, &dataset)).transpose()?;
    let attention = a.attention_model.as_deref().map(AttentionModel::load).transpose()?;
    let config = ServiceConfig {
        default_model: a.default_model,
        default_top_k: a.top_k,
        ..ServiceConfig::default()
    };
    let mut state = ServiceState::new(dataset, pair, attention, config)?;
    state.exec = exec;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(crate::http::serve(state, &a.addr))?;
    Ok(())
}

fn sample_dump(a: SampleDumpArgs) -> Result<()> {
    let dataset = load_dataset(&a.data)?;
    let window = dataset
        .windows
        .get(a.window)
        .with_context(|| format!("no window {}", a.window))?;
    let vocab = dataset.vocabulary();
    let sampler = WindowSampler::new(window, vocab, NegativeWeighting::Frequency);
    let mut rng = stylerec::rng::stream(a.seed, 0);
    let mut out = Vec::new();
    let outfits = window.outfit_range().take(a.limit);
    match a.kind {
        DumpKind::Pairs => {
            let pairs = PairSampler {
                n_pair: a.negatives,
                rho: a.rho,
            };
            let mut batches = Vec::new();
            for k in outfits {
                for p in positive_pairs(dataset.corpus.members(k), a.window) {
                    match pairs.sample(p, &sampler, vocab, &mut rng) {
                        Ok(Some(b)) => batches.push(b),
                        Ok(None) | Err(SamplerError::EmptyPool { .. }) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            dump_batches(&mut out, &batches, vocab)?;
        }
        DumpKind::Outfits => {
            let mut samples = Vec::new();
            for k in outfits {
                match outfit_samples(dataset.corpus.members(k), a.negatives, &sampler, vocab, &mut rng) {
                    Ok(s) => samples.extend(s),
                    Err(SamplerError::EmptyPool { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            dump_outfit_samples(&mut out, &samples, vocab)?;
        }
    }
    write_output(a.output.as_deref(), &out)
}
