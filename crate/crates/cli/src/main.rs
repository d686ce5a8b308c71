//! `xrank`: explain ranked retrieval results and score the explanations.
//!
//! Exit codes: 0 success, 1 fatal error (nothing usable produced),
//! 2 partial failure (progress checkpointed, or some sweep points failed).

mod plotdata;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use xrank_core::corpus_io::{
    load_corpus, load_queries, read_report, write_run, ReportFormat, TextFormat,
};
use xrank_core::metrics::Metric;
use xrank_core::pipeline::{
    discard_checkpoint, evaluate_session, sweep_session, write_evaluation, write_explanations,
    write_sweep, RunConfig, ScorerSpec, Session, EXPLANATIONS_JSONL, RUN_TAG, RUN_TXT,
};
use xrank_core::rationales::ExplainerKind;
use xrank_core::scoring::{build_index, read_index, retrieve_topk, write_index, Bm25Params};
use xrank_core::segmentation::Granularity;
use xrank_core::Error;

const DEFAULT_OUT_DIR: &str = "xrank-out";

#[derive(Parser, Debug)]
#[command(
    name = "xrank",
    version,
    about = "Occlusion rationales and explainability metrics for rankers"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// TOML run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice. A random seed is drawn and logged if omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores, capped by XRANK_WORKERS].
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Built-in scorer.
    #[arg(long, global = true, value_parser = ["bm25", "termcount"])]
    scorer: Option<String>,
    /// External scorer command, spawned and spoken to over stdio.
    #[arg(long, global = true, conflicts_with_all = ["scorer", "scorer_addr"])]
    scorer_cmd: Option<String>,
    /// External scorer listening on host:port.
    #[arg(long, global = true, conflicts_with = "scorer")]
    scorer_addr: Option<String>,
    /// Per-request timeout for external scorers [default: 60000].
    #[arg(long, global = true)]
    scorer_timeout_ms: Option<u64>,
    /// Most texts per external scorer request [default: 64].
    #[arg(long, global = true)]
    scorer_max_batch: Option<usize>,
    /// Output directory [default: xrank-out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Abbreviation list for sentence splitting (one per line).
    #[arg(long, global = true)]
    abbrev_file: Option<PathBuf>,
    /// Stopword list for cosine similarity (one per line).
    #[arg(long, global = true)]
    stopwords: Option<PathBuf>,
    /// Comma-separated metrics: mrc,mer,ndcg,sc,jaccard [default: all].
    #[arg(long, global = true)]
    metrics: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a BM25 index file from a corpus.
    Index(IndexArgs),
    /// First-stage BM25 retrieval into a TREC run file.
    Retrieve(RetrieveArgs),
    /// Rerank and explain the top-k documents; write explanations.jsonl.
    Explain(RunArgs),
    /// Full evaluation run; write report.json and report.tsv.
    Evaluate(RunArgs),
    /// Evaluate a grid of m (and w) values; write sweep.tsv and one report per point.
    Sweep(SweepArgs),
    /// Emit plot data (scatter, curves, correlations) from reports.
    Plotdata(plotdata::PlotArgs),
    /// Re-render a JSON report.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IndexArgs {
    /// Corpus file (jsonl or tsv).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    corpus_format: Option<TextFormat>,
    /// Index file to write [default: <out-dir>/index.bin].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RetrieveArgs {
    /// Corpus file; needed unless --index is given.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    corpus_format: Option<TextFormat>,
    /// Prebuilt index from `xrank index`.
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    queries_format: Option<TextFormat>,
    /// Documents per query.
    #[arg(long, default_value_t = 1000)]
    depth: usize,
    #[arg(long, default_value_t = 1.2)]
    k1: f64,
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    /// Run file to write [default: <out-dir>/run.txt].
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Run parameters; each overrides the matching config field.
#[derive(Args, Debug, Default)]
struct RunArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    corpus_format: Option<TextFormat>,
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long)]
    queries_format: Option<TextFormat>,
    /// Graded judgments, 4-column qrels.
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Sub-document relevance jsonl (needed for MER).
    #[arg(long)]
    subdoc: Option<PathBuf>,
    /// Human span annotations jsonl (needed for Jaccard).
    #[arg(long)]
    human_spans: Option<PathBuf>,
    /// Candidates from a TREC run file; skips BM25 retrieval.
    #[arg(long)]
    run_file: Option<PathBuf>,
    /// Prebuilt BM25 index.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Documents explained per query [default: 10].
    #[arg(long)]
    k: Option<usize>,
    /// First-stage retrieval depth [default: 1000].
    #[arg(long)]
    depth: Option<usize>,
    /// Rationales per document [default: 3].
    #[arg(long)]
    m: Option<usize>,
    /// Explanation unit [default: sentence].
    #[arg(long)]
    granularity: Option<Granularity>,
    /// Explainer [default: greedy].
    #[arg(long, value_parser = ["greedy", "sampled"])]
    explainer: Option<String>,
    /// Word-window width [default: 10].
    #[arg(long)]
    w: Option<usize>,
    /// Word-window stride [default: w].
    #[arg(long)]
    stride: Option<usize>,
    /// Segments masked per sample [default: 1].
    #[arg(long)]
    n_per_sample: Option<usize>,
    /// Number of samples [default: 5 x segments].
    #[arg(long)]
    num_samples: Option<usize>,
    /// Mask every segment alone once instead of sampling.
    #[arg(long)]
    exhaustive: bool,
    /// Divide accumulated weights by how often each segment was masked.
    #[arg(long)]
    mean_normalized: bool,
    /// Score documents as the max over chunks of this many sentences.
    #[arg(long)]
    chunk_size: Option<usize>,
    /// Largest span combination masked for fidelity [default: 2].
    #[arg(long)]
    fidelity_m_max: Option<usize>,
    /// Cap on span combinations per document [default: 1024].
    #[arg(long)]
    combination_budget: Option<usize>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Disable the score cache.
    #[arg(long)]
    no_cache: bool,
    /// Checkpoint file [default: <out-dir>/checkpoint.jsonl].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Comma-separated m values.
    #[arg(long, value_delimiter = ',')]
    m_list: Vec<usize>,
    /// Comma-separated word-window widths (word_window granularity only).
    #[arg(long, value_delimiter = ',')]
    w_list: Vec<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSON report written by `evaluate` or `sweep`.
    input: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: ReportFormat,
    /// Output file [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(global: &GlobalArgs, run: &RunArgs) -> Result<RunConfig> {
    let mut c = match &global.config {
        Some(p) => RunConfig::from_toml_file(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:ident, $value:expr) => {
            if let Some(v) = $value.clone() {
                c.$field = v;
            }
        };
        (opt $field:ident, $value:expr) => {
            if let Some(v) = $value.clone() {
                c.$field = Some(v);
            }
        };
    }
    set!(opt corpus, run.corpus);
    set!(opt corpus_format, run.corpus_format);
    set!(opt queries, run.queries);
    set!(opt queries_format, run.queries_format);
    set!(opt qrels, run.qrels);
    set!(opt subdoc, run.subdoc);
    set!(opt human_spans, run.human_spans);
    set!(opt run_file, run.run_file);
    set!(opt index, run.index);
    set!(opt abbreviations, global.abbrev_file);
    set!(opt stopwords, global.stopwords);
    set!(k, run.k);
    set!(depth, run.depth);
    set!(m, run.m);
    set!(granularity, run.granularity);
    set!(w, run.w);
    set!(opt stride, run.stride);
    set!(n_per_sample, run.n_per_sample);
    set!(opt num_samples, run.num_samples);
    set!(opt chunk_size, run.chunk_size);
    set!(fidelity_m_max, run.fidelity_m_max);
    set!(combination_budget, run.combination_budget);
    set!(k1, run.k1);
    set!(b, run.b);
    set!(opt checkpoint, run.checkpoint);
    set!(opt seed, global.seed);
    set!(opt workers, global.workers);
    set!(scorer_timeout_ms, global.scorer_timeout_ms);
    set!(scorer_max_batch, global.scorer_max_batch);
    set!(opt out_dir, global.out_dir);
    if let Some(e) = &run.explainer {
        c.explainer = match e.as_str() {
            "sampled" => ExplainerKind::Sampled,
            _ => ExplainerKind::Greedy,
        };
    }
    if run.exhaustive {
        c.exhaustive = true;
    }
    if run.mean_normalized {
        c.mean_normalized = true;
    }
    if run.no_cache {
        c.cache = false;
    }
    if let Some(m) = &global.metrics {
        c.metrics = Metric::parse_list(m)?;
    }
    if let Some(s) = &global.scorer {
        c.scorer = if s == "termcount" {
            ScorerSpec::Termcount
        } else {
            ScorerSpec::Bm25
        };
    }
    if let Some(cmd) = &global.scorer_cmd {
        c.scorer = ScorerSpec::Cmd {
            command: cmd.clone(),
        };
    }
    if let Some(addr) = &global.scorer_addr {
        c.scorer = ScorerSpec::Addr {
            address: addr.clone(),
        };
    }
    if c.out_dir.is_none() {
        c.out_dir = Some(PathBuf::from(DEFAULT_OUT_DIR));
    }
    // Resolve the seed once so every stage and the report agree on it.
    c.seed = Some(xrank_core::pipeline::resolve_seed(c.seed));
    Ok(c)
}

fn out_dir(global: &GlobalArgs) -> PathBuf {
    global
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn format_of(explicit: Option<TextFormat>, path: &Path) -> TextFormat {
    explicit.unwrap_or_else(|| TextFormat::from_path(path))
}

fn cmd_index(global: &GlobalArgs, args: &IndexArgs) -> Result<ExitCode> {
    let corpus = load_corpus(&args.corpus, format_of(args.corpus_format, &args.corpus))?;
    let index = build_index(&corpus);
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir(global).join("index.bin"));
    ensure_parent(&out)?;
    write_index(&index, &out)?;
    info!(
        "indexed {} documents, {} terms into {}",
        index.num_docs(),
        index.num_terms(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_retrieve(global: &GlobalArgs, args: &RetrieveArgs) -> Result<ExitCode> {
    let index = match (&args.index, &args.corpus) {
        (Some(p), _) => read_index(p)?,
        (None, Some(c)) => build_index(&load_corpus(c, format_of(args.corpus_format, c))?),
        (None, None) => bail!("retrieve needs --index or --corpus"),
    };
    let queries = load_queries(&args.queries, format_of(args.queries_format, &args.queries))?;
    let params = Bm25Params::new(args.k1, args.b)?;
    let lists = queries
        .iter()
        .map(|q| retrieve_topk(&index, &params, &q.query_id, &q.text, args.depth))
        .collect::<xrank_core::Result<Vec<_>>>()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| out_dir(global).join(RUN_TXT));
    ensure_parent(&out)?;
    write_run(&lists, &out, RUN_TAG)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_explain(global: &GlobalArgs, args: &RunArgs) -> Result<ExitCode> {
    let config = build_config(global, args)?;
    let session = Session::open(&config)?;
    let lists = session.rerank(&session.candidates()?)?;
    let checkpoint = config
        .checkpoint
        .clone()
        .or_else(|| config.out_dir.as_ref().map(|d| d.join("checkpoint.jsonl")));
    let explanations = session.explain(
        &lists,
        &config.segmentation(),
        config.m,
        checkpoint.as_deref(),
    )?;
    let dir = config.out_dir.clone().expect("set by build_config");
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_explanations(&dir.join(EXPLANATIONS_JSONL), &lists, &explanations)?;
    write_run(&lists, &dir.join(RUN_TXT), RUN_TAG)?;
    discard_checkpoint(checkpoint.as_deref())?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_evaluate(global: &GlobalArgs, args: &RunArgs) -> Result<ExitCode> {
    let config = build_config(global, args)?;
    let session = Session::open(&config)?;
    let eval = evaluate_session(&session)?;
    let dir = config.out_dir.clone().expect("set by build_config");
    write_evaluation(&dir, &eval)?;
    if let Some(cache) = session.cache() {
        info!(
            "score cache: {} hits, {} misses",
            cache.hits(),
            cache.misses()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(global: &GlobalArgs, args: &SweepArgs) -> Result<ExitCode> {
    let mut config = build_config(global, &args.run)?;
    if !args.m_list.is_empty() {
        config.m_list = args.m_list.clone();
    }
    if !args.w_list.is_empty() {
        config.w_list = args.w_list.clone();
    }
    let session = Session::open(&config)?;
    let outcome = sweep_session(&session)?;
    let dir = config.out_dir.clone().expect("set by build_config");
    write_sweep(&dir, &outcome)?;
    let failed = outcome.failed();
    if failed == 0 {
        Ok(ExitCode::SUCCESS)
    } else if failed == outcome.points.len() {
        eprintln!("xrank: every sweep point failed");
        Ok(ExitCode::from(1))
    } else {
        eprintln!(
            "xrank: {failed} of {} sweep points failed",
            outcome.points.len()
        );
        Ok(ExitCode::from(2))
    }
}

fn cmd_report(args: &ReportArgs) -> Result<ExitCode> {
    let report = read_report(&args.input)?;
    let mut buf = Vec::new();
    match args.format {
        ReportFormat::Json => {
            buf.extend(xrank_core::corpus_io::report_to_json(&report)?.into_bytes())
        }
        ReportFormat::Tsv => xrank_core::corpus_io::format_report_tsv(&report, &mut buf)?,
    }
    match &args.out {
        Some(p) => {
            ensure_parent(p)?;
            std::fs::write(p, buf).with_context(|| format!("writing {}", p.display()))?
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&buf)?
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Index(a) => cmd_index(&cli.global, a),
        Command::Retrieve(a) => cmd_retrieve(&cli.global, a),
        Command::Explain(a) => cmd_explain(&cli.global, a),
        Command::Evaluate(a) => cmd_evaluate(&cli.global, a),
        Command::Sweep(a) => cmd_sweep(&cli.global, a),
        Command::Plotdata(a) => plotdata::run(&cli.global.out_dir, a),
        Command::Report(a) => cmd_report(a),
    }
}

/// Partial failure when the run saved work before stopping.
fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Aborted { completed, .. }) if *completed > 0 => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(err) => {
            let code = exit_code_for(&err);
            if code == 2 {
                warn!("partial failure; rerun the same command to resume");
            }
            eprintln!("xrank: {err:#}");
            ExitCode::from(code)
        }
    }
}
