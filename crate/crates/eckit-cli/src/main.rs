//! `eckit` command-line interface.
//!
//! One entry point for the whole pipeline: train scorers, score and filter
//! corpora, run the edit-distance baseline, build ratio histograms,
//! evaluate EC output and render reports, and generate synthetic corpora.
//!
//! Conventions: `-` means stdin/stdout for corpus paths; diagnostics go to
//! stderr; every run writes a manifest with the resolved configuration
//! (`--manifest`, default `run.json`). Values may come from a JSON config
//! file (`--config`); explicit flags win. Exit codes: 0 success, 1 usage
//! error, 2 data error.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use eckit::align::{corpus_cer, normalized_edit_distance_with, NedDenominator};
use eckit::channel::{ChannelConfig, ChannelModel};
use eckit::corpus::{open_corpus_reader, write_record, CorpusReader, ECPair, NormScheme};
use eckit::eval::{
    aggregate_summary, read_triplets, render_report, testset_metrics, ReportFormat,
    TestSetMetrics,
};
use eckit::filter::{
    score_pair, FilterConfig, FilterRun, FilterScorers, FilterStats, Histogram, RatioCriterion,
    ScoredPair, TagScorer, TAG_C1, TAG_C2, TAG_DECISION,
};
use eckit::lm::{NgramModel, PllScorer, Smoothing};
use eckit::synth::{gen_labeled_corpus, gen_lexicon, NoiseProfile};

const TOOL: &str = "eckit";
const VERSION: &str = env!("CARGO_PKG_VERSION");
/// Records scored per parallel batch; fixed so output is independent of the
/// thread count.
const CHUNK: usize = 4096;

#[derive(Parser)]
#[command(name = TOOL, version, about = "EC training-data filtering and evaluation toolkit")]
struct Cli {
    /// JSON config file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for scoring (1 = sequential; results are identical
    /// for any value).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Where to write the resolved run manifest.
    #[arg(long, global = true, default_value = "run.json")]
    manifest: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a character n-gram language model.
    TrainLm(TrainLmArgs),
    /// Train the phoneme-to-text channel model.
    TrainChannel(TrainChannelArgs),
    /// Attach C1/C2 log-ratio tags to every record.
    Score(ScoreArgs),
    /// Classify pairs and rewrite or discard the noisy ones.
    Filter(FilterArgs),
    /// Baseline filter: discard pairs with large normalized edit distance.
    EditFilter(EditFilterArgs),
    /// Log-likelihood-ratio histogram over effective pairs.
    Hist(HistArgs),
    /// Compute CER / %EC / %LA per test set.
    Eval(EvalArgs),
    /// Aggregate eval output and render a report.
    Report(ReportArgs),
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainLmArgs {
    /// Input corpus (JSONL, `.gz` accepted).
    #[arg(long)]
    input: PathBuf,
    /// Output model file (JSON).
    #[arg(long)]
    output: PathBuf,
    /// n-gram order.
    #[arg(long)]
    order: Option<usize>,
    /// Which text to train on: target, source or both.
    #[arg(long)]
    field: Option<String>,
    /// Reverse each training text (for the backward model of the
    /// acceptability scorer).
    #[arg(long)]
    reverse: bool,
}

#[derive(Args)]
struct TrainChannelArgs {
    /// Input corpus; training pairs are (source phonemes, target text).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    p_max: Option<usize>,
    #[arg(long)]
    g_max: Option<usize>,
    #[arg(long)]
    unit_order: Option<usize>,
    #[arg(long)]
    em_iters: Option<usize>,
    #[arg(long)]
    floor: Option<f64>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Language model for C1 ratios.
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Length-normalize C1 ratios (per character).
    #[arg(long)]
    per_char_c1: bool,
    /// Channel model for C2 ratios.
    #[arg(long)]
    channel: Option<PathBuf>,
    /// Input corpus (`-` for stdin).
    input: String,
    /// Output corpus (`-` for stdout).
    output: String,
}

#[derive(Args)]
struct FilterArgs {
    /// Criteria: c1, c2, c1+c2 or none.
    #[arg(long)]
    criteria: Option<String>,
    /// Action on noisy pairs: replace or discard.
    #[arg(long)]
    action: Option<String>,
    /// Log-space C1 threshold (log 1 = 0 by default).
    #[arg(long)]
    log_c1: Option<f64>,
    /// Log-space C2 threshold.
    #[arg(long)]
    log_c2: Option<f64>,
    /// Swap the clean/noisy roles over effective pairs.
    #[arg(long)]
    inverse: bool,
    #[arg(long)]
    lm: Option<PathBuf>,
    /// Length-normalize C1 ratios (per character).
    #[arg(long)]
    per_char_c1: bool,
    #[arg(long)]
    channel: Option<PathBuf>,
    /// Use precomputed c1_log_ratio / c2_log_ratio tags as scorers.
    #[arg(long)]
    use_tag_scores: bool,
    /// Write filter statistics (JSON) here.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Write the C1 ratio histogram (CSV) here.
    #[arg(long)]
    hist_c1: Option<PathBuf>,
    /// Write the C2 ratio histogram (CSV) here.
    #[arg(long)]
    hist_c2: Option<PathBuf>,
    input: String,
    output: String,
}

#[derive(Args)]
struct EditFilterArgs {
    /// Discard pairs with normalized edit distance strictly above this.
    #[arg(long)]
    threshold: Option<f64>,
    /// Normalization applied before alignment: nfc or nfkc_fold.
    #[arg(long)]
    normalizer: Option<String>,
    /// Length used as denominator: reference, hypothesis or max.
    #[arg(long)]
    denominator: Option<String>,
    #[arg(long)]
    stats: Option<PathBuf>,
    input: String,
    output: String,
}

#[derive(Args)]
struct HistArgs {
    /// Which ratio: c1 or c2.
    #[arg(long)]
    criterion: Option<String>,
    #[arg(long)]
    bin_width: Option<f64>,
    /// Threshold marker recorded with the histogram.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    channel: Option<PathBuf>,
    #[arg(long)]
    use_tag_scores: bool,
    input: String,
    /// Output CSV (`-` for stdout).
    output: String,
}

#[derive(Args)]
struct EvalArgs {
    /// Forward n-gram model for the acceptability scorer.
    #[arg(long)]
    fwd_lm: PathBuf,
    /// Backward (reverse-trained) n-gram model.
    #[arg(long)]
    bwd_lm: PathBuf,
    /// Metrics output (JSON; `-` for stdout).
    #[arg(long)]
    output: Option<String>,
    /// Test set files, one triplet JSONL ({id, before, after, ref}) each.
    #[arg(required = true)]
    testsets: Vec<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Metrics JSON produced by `eval` (`-` for stdin).
    #[arg(long)]
    metrics: String,
    /// Output format: markdown, csv or json.
    #[arg(long)]
    format: Option<String>,
    /// Variant label shown in the report.
    #[arg(long)]
    variant: Option<String>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of pairs to generate.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_words: Option<usize>,
    /// Phoneme alphabet size.
    #[arg(long)]
    phonemes: Option<usize>,
    /// Noise profile JSON (mix and corruption rates; the resolved seed
    /// always overrides the file's seed).
    #[arg(long)]
    profile: Option<PathBuf>,
    output: String,
}

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn data(msg: impl std::fmt::Display) -> CliError {
    CliError::Data(msg.to_string())
}

trait IntoData<T> {
    fn or_data(self) -> CliResult<T>;
}

impl<T, E: std::fmt::Display> IntoData<T> for Result<T, E> {
    fn or_data(self) -> CliResult<T> {
        self.map_err(data)
    }
}

// ---------------------------------------------------------------------------
// Config-file resolution
// ---------------------------------------------------------------------------

struct Resolver {
    values: serde_json::Map<String, Value>,
}

impl Resolver {
    fn load(path: Option<&Path>) -> CliResult<Resolver> {
        let Some(path) = path else {
            return Ok(Resolver { values: Default::default() });
        };
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let values: serde_json::Map<String, Value> = serde_json::from_str(&text)
            .map_err(|e| usage(format!("config {} is not a JSON object: {e}", path.display())))?;
        Ok(Resolver { values })
    }

    /// Flag value if given, else the config-file key, else the default.
    fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> CliResult<T> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.values.get(key) {
            None => Ok(default),
            Some(value) => serde_json::from_value(value.clone())
                .map_err(|e| usage(format!("config key `{key}`: {e}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// I/O helpers
// ---------------------------------------------------------------------------

fn open_input(path: &str) -> CliResult<Box<dyn BufRead>> {
    if path == "-" {
        Ok(Box::new(std::io::BufReader::new(std::io::stdin())))
    } else {
        open_corpus_reader(Path::new(path)).or_data()
    }
}

fn open_output(path: &str) -> CliResult<Box<dyn Write>> {
    if path == "-" {
        Ok(Box::new(std::io::BufWriter::new(std::io::stdout())))
    } else {
        let file =
            fs::File::create(path).map_err(|e| data(format!("cannot create {path}: {e}")))?;
        Ok(Box::new(std::io::BufWriter::new(file)))
    }
}

fn write_text_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| data(format!("cannot write {}: {e}", path.display())))
}

fn load_lm(path: &Path) -> CliResult<NgramModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| data(format!("cannot read {}: {e}", path.display())))?;
    NgramModel::from_json(&text).or_data()
}

fn load_channel(path: &Path) -> CliResult<ChannelModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| data(format!("cannot read {}: {e}", path.display())))?;
    ChannelModel::from_json(&text).or_data()
}

fn build_pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| data(format!("cannot build thread pool: {e}")))
}

/// Stream a corpus in fixed-size chunks, scoring each chunk in parallel and
/// handing the results over in input order. The sink also receives the
/// corpus meta captured from the optional header line.
fn stream_scored(
    input: &str,
    pool: &rayon::ThreadPool,
    scorers: &FilterScorers,
    mut sink: impl FnMut(&eckit::corpus::CorpusMeta, ScoredPair) -> CliResult<()>,
) -> CliResult<()> {
    let mut reader = CorpusReader::new(open_input(input)?).or_data()?;
    let meta = reader.meta.clone();
    loop {
        let mut chunk = Vec::with_capacity(CHUNK);
        while chunk.len() < CHUNK {
            match reader.next() {
                Some(pair) => chunk.push(pair.or_data()?),
                None => break,
            }
        }
        if chunk.is_empty() {
            return Ok(());
        }
        let scored: Vec<ScoredPair> =
            pool.install(|| chunk.par_iter().map(|p| score_pair(p, scorers)).collect());
        for sp in scored {
            sink(&meta, sp)?;
        }
    }
}

fn manifest(cli: &Cli, subcommand: &str, threads: usize, args: Value) -> CliResult<()> {
    #[derive(Serialize)]
    struct Manifest<'a> {
        tool: &'a str,
        version: &'a str,
        subcommand: &'a str,
        threads: usize,
        config_file: Option<String>,
        args: Value,
    }
    let body = Manifest {
        tool: TOOL,
        version: VERSION,
        subcommand,
        threads,
        config_file: cli.config.as_ref().map(|p| p.display().to_string()),
        args,
    };
    let text = serde_json::to_string_pretty(&body).or_data()?;
    write_text_file(&cli.manifest, &(text + "\n"))
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn run_train_lm(cli: &Cli, args: &TrainLmArgs, resolver: &Resolver, threads: usize) -> CliResult<()> {
    let order = resolver.get(args.order, "order", 5)?;
    let field = resolver.get(args.field.clone(), "field", "target".to_string())?;
    if !matches!(field.as_str(), "target" | "source" | "both") {
        return Err(usage(format!("--field must be target, source or both, got {field}")));
    }
    manifest(
        cli,
        "train-lm",
        threads,
        json!({
            "input": args.input.display().to_string(),
            "output": args.output.display().to_string(),
            "order": order,
            "field": field,
            "reverse": args.reverse,
        }),
    )?;

    let mut texts: Vec<String> = Vec::new();
    let reader = open_corpus_reader(&args.input).or_data()?;
    eckit::corpus::for_each_record(reader, |pair| {
        match field.as_str() {
            "target" => texts.push(pair.target_text),
            "source" => texts.push(pair.source_text),
            _ => {
                texts.push(pair.source_text);
                texts.push(pair.target_text);
            }
        }
        Ok(())
    })
    .or_data()?;
    if args.reverse {
        for text in &mut texts {
            *text = text.chars().rev().collect();
        }
    }
    let model = NgramModel::train(&texts, order, Smoothing::WittenBell).or_data()?;
    write_text_file(&args.output, &model.to_json())?;
    eprintln!("trained order-{order} model on {} texts -> {}", texts.len(), args.output.display());
    Ok(())
}

fn run_train_channel(
    cli: &Cli,
    args: &TrainChannelArgs,
    resolver: &Resolver,
    threads: usize,
) -> CliResult<()> {
    let config = ChannelConfig {
        p_max: resolver.get(args.p_max, "p_max", 2)?,
        g_max: resolver.get(args.g_max, "g_max", 2)?,
        unit_order: resolver.get(args.unit_order, "unit_order", 2)?,
        em_iters: resolver.get(args.em_iters, "em_iters", 10)?,
        floor: resolver.get(args.floor, "floor", 1e-12)?,
        ..Default::default()
    };
    manifest(
        cli,
        "train-channel",
        threads,
        json!({
            "input": args.input.display().to_string(),
            "output": args.output.display().to_string(),
            "config": config,
        }),
    )?;

    let mut pairs: Vec<(Vec<String>, String)> = Vec::new();
    let reader = open_corpus_reader(&args.input).or_data()?;
    eckit::corpus::for_each_record(reader, |pair| {
        pairs.push((pair.source_phonemes, pair.target_text));
        Ok(())
    })
    .or_data()?;
    let total = pairs.len();
    let model = ChannelModel::train(&pairs, &config).or_data()?;
    if model.skipped_pairs() > 0 {
        eprintln!("warning: {} pairs skipped (empty or unalignable)", model.skipped_pairs());
    }
    let trace = model.log_likelihood_trace();
    eprintln!(
        "trained channel on {} pairs, {} units, final log-likelihood {:.3} -> {}",
        total - model.skipped_pairs(),
        model.inventory().len(),
        trace.last().copied().unwrap_or(f64::NAN),
        args.output.display()
    );
    write_text_file(&args.output, &model.to_json())
}

fn run_score(cli: &Cli, args: &ScoreArgs, threads: usize) -> CliResult<()> {
    if args.lm.is_none() && args.channel.is_none() {
        return Err(usage("score needs --lm and/or --channel"));
    }
    manifest(
        cli,
        "score",
        threads,
        json!({
            "lm": args.lm.as_ref().map(|p| p.display().to_string()),
            "channel": args.channel.as_ref().map(|p| p.display().to_string()),
            "per_char_c1": args.per_char_c1,
            "input": args.input,
            "output": args.output,
        }),
    )?;
    let lm = args.lm.as_deref().map(load_lm).transpose()?;
    let per_char = lm.as_ref().map(eckit::filter::PerCharC1);
    let channel = args.channel.as_deref().map(load_channel).transpose()?;
    let scorers = FilterScorers {
        c1: if args.per_char_c1 {
            per_char.as_ref().map(|s| s as &dyn eckit::filter::C1Scorer)
        } else {
            lm.as_ref().map(|m| m as &dyn eckit::filter::C1Scorer)
        },
        c2: channel.as_ref().map(|m| m as &dyn eckit::filter::C2Scorer),
    };
    let pool = build_pool(threads)?;
    let mut out = open_output(&args.output)?;
    let mut wrote_meta = false;
    stream_scored(&args.input, &pool, &scorers, |meta, sp| {
        if !wrote_meta {
            writeln!(out, "{}", json!({ "meta": meta })).or_data()?;
            wrote_meta = true;
        }
        let mut pair = sp.pair;
        if let Some(r) = sp.c1_log_ratio {
            pair.tags.insert(TAG_C1.to_string(), r.to_string());
        }
        if let Some(r) = sp.c2_log_ratio {
            pair.tags.insert(TAG_C2.to_string(), r.to_string());
        }
        pair.tags
            .insert("norm_edit_distance".to_string(), sp.norm_edit_distance.to_string());
        writeln!(out, "{}", write_record(&pair)).or_data()
    })?;
    out.flush().or_data()
}

fn run_filter(cli: &Cli, args: &FilterArgs, resolver: &Resolver, threads: usize) -> CliResult<()> {
    let criteria: String = resolver.get(args.criteria.clone(), "criteria", "c1+c2".to_string())?;
    let action: String = resolver.get(args.action.clone(), "action", "replace".to_string())?;
    let config = FilterConfig {
        log_c1: resolver.get(args.log_c1, "log_c1", 0.0)?,
        log_c2: resolver.get(args.log_c2, "log_c2", 0.0)?,
        criteria: criteria.parse().map_err(usage)?,
        action: action.parse().map_err(usage)?,
        inverse: args.inverse,
    };
    if config.active_c1() && args.lm.is_none() && !args.use_tag_scores {
        return Err(usage("criteria include C1: pass --lm or --use-tag-scores"));
    }
    if config.active_c2() && args.channel.is_none() && !args.use_tag_scores {
        return Err(usage("criteria include C2: pass --channel or --use-tag-scores"));
    }
    manifest(
        cli,
        "filter",
        threads,
        json!({
            "config": config,
            "lm": args.lm.as_ref().map(|p| p.display().to_string()),
            "per_char_c1": args.per_char_c1,
            "channel": args.channel.as_ref().map(|p| p.display().to_string()),
            "use_tag_scores": args.use_tag_scores,
            "input": args.input,
            "output": args.output,
            "stats": args.stats.as_ref().map(|p| p.display().to_string()),
        }),
    )?;

    let lm = args.lm.as_deref().map(load_lm).transpose()?;
    let per_char = lm.as_ref().map(eckit::filter::PerCharC1);
    let channel = args.channel.as_deref().map(load_channel).transpose()?;
    let tags = TagScorer::default();
    let model_c1 = if args.per_char_c1 {
        per_char.as_ref().map(|s| s as &dyn eckit::filter::C1Scorer)
    } else {
        lm.as_ref().map(|m| m as &dyn eckit::filter::C1Scorer)
    };
    let scorers = FilterScorers {
        c1: model_c1
            .or(args.use_tag_scores.then_some(&tags as &dyn eckit::filter::C1Scorer)),
        c2: channel
            .as_ref()
            .map(|m| m as &dyn eckit::filter::C2Scorer)
            .or(args.use_tag_scores.then_some(&tags as &dyn eckit::filter::C2Scorer)),
    };

    let pool = build_pool(threads)?;
    let mut run = FilterRun::new(config).map_err(usage)?;
    let mut out = open_output(&args.output)?;
    let mut wrote_meta = false;
    stream_scored(&args.input, &pool, &scorers, |meta, sp| {
        if !wrote_meta {
            writeln!(out, "{}", json!({ "meta": meta })).or_data()?;
            wrote_meta = true;
        }
        let outcome = run.process(&sp);
        if outcome.kept {
            let mut pair = outcome.pair;
            pair.tags.insert(TAG_DECISION.to_string(), outcome.decision.to_string());
            writeln!(out, "{}", write_record(&pair)).or_data()?;
        }
        Ok(())
    })?;
    out.flush().or_data()?;

    let stats = run.finish();
    report_filter_stats(&stats);
    if let Some(path) = &args.stats {
        let text = serde_json::to_string_pretty(&stats).or_data()?;
        write_text_file(path, &(text + "\n"))?;
    }
    if let Some(path) = &args.hist_c1 {
        write_histogram(path, stats.histogram_c1.as_ref())?;
    }
    if let Some(path) = &args.hist_c2 {
        write_histogram(path, stats.histogram_c2.as_ref())?;
    }
    Ok(())
}

fn write_histogram(path: &Path, histogram: Option<&Histogram>) -> CliResult<()> {
    match histogram {
        Some(h) => write_text_file(path, &h.to_csv()),
        None => write_text_file(path, "bin_left,count\n"),
    }
}

fn report_filter_stats(stats: &FilterStats) {
    eprintln!(
        "filtered {} records: {} exact, {} effective ({} noisy by C1, {} by C2, {} combined), {} replaced, {} discarded, {} skipped",
        stats.total,
        stats.exact_match,
        stats.effective,
        stats.noisy_c1,
        stats.noisy_c2,
        stats.noisy_combined,
        stats.replaced,
        stats.discarded,
        stats.skipped
    );
}

fn run_edit_filter(
    cli: &Cli,
    args: &EditFilterArgs,
    resolver: &Resolver,
    threads: usize,
) -> CliResult<()> {
    let threshold = resolver.get(args.threshold, "threshold", 0.5)?;
    if !threshold.is_finite() || threshold <= 0.0 {
        return Err(usage("--threshold must be in (0, inf)"));
    }
    let normalizer: String =
        resolver.get(args.normalizer.clone(), "normalizer", "nfc".to_string())?;
    let scheme: NormScheme = normalizer.parse().map_err(usage)?;
    let denominator: String =
        resolver.get(args.denominator.clone(), "denominator", "reference".to_string())?;
    let denominator: NedDenominator = denominator.parse().map_err(usage)?;
    manifest(
        cli,
        "edit-filter",
        threads,
        json!({
            "threshold": threshold,
            "normalizer": scheme.name(),
            "denominator": format!("{denominator:?}").to_lowercase(),
            "input": args.input,
            "output": args.output,
        }),
    )?;

    let mut reader = CorpusReader::new(open_input(&args.input)?).or_data()?;
    let mut out = open_output(&args.output)?;
    writeln!(out, "{}", json!({ "meta": reader.meta })).or_data()?;
    let mut stats = FilterStats::default();
    for pair in &mut reader {
        let pair = pair.or_data()?;
        stats.total += 1;
        if pair.is_exact_match() {
            stats.exact_match += 1;
        } else {
            stats.effective += 1;
        }
        let ned = normalized_edit_distance_with(
            &pair.source_text,
            &pair.target_text,
            scheme,
            denominator,
        );
        if ned > threshold {
            stats.discarded += 1;
        } else {
            writeln!(out, "{}", write_record(&pair)).or_data()?;
        }
    }
    out.flush().or_data()?;
    report_filter_stats(&stats);
    if let Some(path) = &args.stats {
        let text = serde_json::to_string_pretty(&stats).or_data()?;
        write_text_file(path, &(text + "\n"))?;
    }
    Ok(())
}

fn run_hist(cli: &Cli, args: &HistArgs, resolver: &Resolver, threads: usize) -> CliResult<()> {
    let criterion: String = resolver.get(args.criterion.clone(), "criterion", "c1".to_string())?;
    let criterion = match criterion.as_str() {
        "c1" => RatioCriterion::C1,
        "c2" => RatioCriterion::C2,
        other => return Err(usage(format!("--criterion must be c1 or c2, got {other}"))),
    };
    let bin_width = resolver.get(args.bin_width, "bin_width", 0.5)?;
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(usage("--bin-width must be > 0"));
    }
    let threshold = resolver.get(args.threshold, "threshold", 0.0)?;
    let have_scorer = args.use_tag_scores
        || (criterion == RatioCriterion::C1 && args.lm.is_some())
        || (criterion == RatioCriterion::C2 && args.channel.is_some());
    if !have_scorer {
        return Err(usage("hist needs --lm (c1), --channel (c2) or --use-tag-scores"));
    }
    manifest(
        cli,
        "hist",
        threads,
        json!({
            "criterion": if criterion == RatioCriterion::C1 { "c1" } else { "c2" },
            "bin_width": bin_width,
            "threshold": threshold,
            "input": args.input,
            "output": args.output,
        }),
    )?;

    let lm = args.lm.as_deref().map(load_lm).transpose()?;
    let channel = args.channel.as_deref().map(load_channel).transpose()?;
    let tags = TagScorer::default();
    let scorers = FilterScorers {
        c1: lm
            .as_ref()
            .map(|m| m as &dyn eckit::filter::C1Scorer)
            .or(args.use_tag_scores.then_some(&tags as &dyn eckit::filter::C1Scorer)),
        c2: channel
            .as_ref()
            .map(|m| m as &dyn eckit::filter::C2Scorer)
            .or(args.use_tag_scores.then_some(&tags as &dyn eckit::filter::C2Scorer)),
    };
    let pool = build_pool(threads)?;
    let mut scored = Vec::new();
    stream_scored(&args.input, &pool, &scorers, |_, sp| {
        // only the ratios and the exact-match flag feed the histogram; drop
        // the texts to keep memory flat
        let slim = ScoredPair {
            pair: ECPair::new(sp.pair.id.clone(), "", vec![], ""),
            exact_match: sp.exact_match,
            ..sp
        };
        scored.push(slim);
        Ok(())
    })?;
    let histogram =
        eckit::filter::ratio_histogram(&scored, criterion, bin_width, threshold).map_err(usage)?;
    let mut out = open_output(&args.output)?;
    out.write_all(histogram.to_csv().as_bytes()).or_data()?;
    out.flush().or_data()?;
    eprintln!("histogram over {} effective scored pairs", histogram.total());
    Ok(())
}

/// Per-test-set row in the eval output file.
#[derive(Serialize, serde::Deserialize)]
struct EvalRow {
    name: String,
    n_utterances: usize,
    orig_cer: f64,
    cer: f64,
    pct_ec: f64,
    pct_la: Option<f64>,
}

#[derive(Serialize, serde::Deserialize)]
struct EvalFile {
    tests: Vec<EvalRow>,
}

fn run_eval(cli: &Cli, args: &EvalArgs, threads: usize) -> CliResult<()> {
    manifest(
        cli,
        "eval",
        threads,
        json!({
            "fwd_lm": args.fwd_lm.display().to_string(),
            "bwd_lm": args.bwd_lm.display().to_string(),
            "testsets": args.testsets.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "output": args.output,
        }),
    )?;
    let scorer = PllScorer { forward: load_lm(&args.fwd_lm)?, backward: load_lm(&args.bwd_lm)? };
    let pool = build_pool(threads)?;
    let rows: Vec<Result<EvalRow, String>> = pool.install(|| {
        args.testsets
            .par_iter()
            .map(|path| {
                let reader = open_corpus_reader(path).map_err(|e| e.to_string())?;
                let triplets = read_triplets(reader).map_err(|e| e.to_string())?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                let before: Vec<String> = triplets.iter().map(|t| t.before.clone()).collect();
                let after: Vec<String> = triplets.iter().map(|t| t.after.clone()).collect();
                let refs: Vec<String> = triplets.iter().map(|t| t.reference.clone()).collect();
                let metrics = testset_metrics(&name, &before, &after, &refs, &scorer)
                    .map_err(|e| e.to_string())?;
                let orig_cer = corpus_cer(&before, &refs).map_err(|e| e.to_string())? * 100.0;
                Ok(EvalRow {
                    name,
                    n_utterances: metrics.n_utterances,
                    orig_cer,
                    cer: metrics.cer,
                    pct_ec: metrics.pct_ec,
                    pct_la: metrics.pct_la,
                })
            })
            .collect()
    });
    let rows: Vec<EvalRow> = rows.into_iter().collect::<Result<_, String>>().or_data()?;
    let body = serde_json::to_string_pretty(&EvalFile { tests: rows }).or_data()?;
    let mut out = open_output(args.output.as_deref().unwrap_or("-"))?;
    writeln!(out, "{body}").or_data()?;
    out.flush().or_data()
}

fn run_report(cli: &Cli, args: &ReportArgs, resolver: &Resolver, threads: usize) -> CliResult<()> {
    let format_name: String = resolver.get(args.format.clone(), "format", "markdown".to_string())?;
    let format: ReportFormat = format_name.parse().map_err(usage)?;
    let variant = resolver.get(args.variant.clone(), "variant", "eckit".to_string())?;
    manifest(
        cli,
        "report",
        threads,
        json!({
            "metrics": args.metrics,
            "format": format_name,
            "variant": variant,
            "output": args.output.as_ref().map(|p| p.display().to_string()),
        }),
    )?;
    let text = if args.metrics == "-" {
        let mut buf = String::new();
        std::io::Read::read_to_string(&mut std::io::stdin(), &mut buf).or_data()?;
        buf
    } else {
        fs::read_to_string(&args.metrics).or_data()?
    };
    let file: EvalFile = serde_json::from_str(&text).or_data()?;
    let mut rows = Vec::new();
    let mut orig = Vec::new();
    for row in file.tests {
        orig.push(row.orig_cer);
        rows.push(TestSetMetrics {
            name: row.name,
            n_utterances: row.n_utterances,
            cer: row.cer,
            pct_ec: row.pct_ec,
            pct_la: row.pct_la,
        });
    }
    let report = aggregate_summary(&variant, rows, &orig).or_data()?;
    let rendered = render_report(&report, format);
    match &args.output {
        Some(path) => write_text_file(path, &rendered)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(rendered.as_bytes()).or_data()?;
            out.flush().or_data()?;
        }
    }
    Ok(())
}

fn run_synth(cli: &Cli, args: &SynthArgs, resolver: &Resolver, threads: usize) -> CliResult<()> {
    let seed = resolver.get(args.seed, "seed", 42u64)?;
    let n = resolver.get(args.n, "n", 1000usize)?;
    let n_words = resolver.get(args.n_words, "n_words", 60usize)?;
    let phonemes = resolver.get(args.phonemes, "phonemes", 14usize)?;
    let mut profile = match &args.profile {
        None => NoiseProfile::default(),
        Some(path) => {
            let text = fs::read_to_string(path).or_data()?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("bad profile {}: {e}", path.display())))?
        }
    };
    profile.seed = seed;
    manifest(
        cli,
        "synth",
        threads,
        json!({
            "seed": seed,
            "n": n,
            "n_words": n_words,
            "phonemes": phonemes,
            "profile": profile,
            "output": args.output,
        }),
    )?;
    let lexicon = gen_lexicon(seed, n_words, phonemes).map_err(usage)?;
    let corpus = gen_labeled_corpus(&lexicon, &profile, n).map_err(usage)?;
    let mut out = open_output(&args.output)?;
    eckit::corpus::write_corpus(&corpus, &mut out).or_data()?;
    out.flush().or_data()?;
    eprintln!("wrote {} synthetic pairs -> {}", corpus.len(), args.output);
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let resolver = Resolver::load(cli.config.as_deref())?;
    let threads = resolver.get(cli.threads, "threads", 1usize)?;
    match &cli.command {
        Command::TrainLm(args) => run_train_lm(cli, args, &resolver, threads),
        Command::TrainChannel(args) => run_train_channel(cli, args, &resolver, threads),
        Command::Score(args) => run_score(cli, args, threads),
        Command::Filter(args) => run_filter(cli, args, &resolver, threads),
        Command::EditFilter(args) => run_edit_filter(cli, args, &resolver, threads),
        Command::Hist(args) => run_hist(cli, args, &resolver, threads),
        Command::Eval(args) => run_eval(cli, args, threads),
        Command::Report(args) => run_report(cli, args, &resolver, threads),
        Command::Synth(args) => run_synth(cli, args, &resolver, threads),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{err}");
                    std::process::exit(0);
                }
                _ => {
                    eprint!("{err}");
                    std::process::exit(1);
                }
            }
        }
    };
    if let Err(err) = run(&cli) {
        eprintln!("error: {}", err.message());
        std::process::exit(err.code());
    }
}
