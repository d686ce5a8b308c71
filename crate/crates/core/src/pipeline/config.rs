//! Run configuration, loadable from TOML.

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus_io::TextFormat;
use crate::error::{Error, Result};
use crate::metrics::{Metric, ReportParams};
use crate::rationales::{ExplainerKind, DEFAULT_COMBINATION_BUDGET};
use crate::scoring::{Bm25Params, ExternalConfig};
use crate::segmentation::{Granularity, Segmentation};

/// Environment variable capping the worker pool size.
pub const WORKERS_ENV: &str = "XRANK_WORKERS";

/// Sentences per chunk when chunk granularity is requested without a size.
pub const DEFAULT_CHUNK_SIZE: usize = 3;

/// Which θ to use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
#[derive(Default)]
pub enum ScorerSpec {
    #[default]
    Bm25,
    /// Query-term occurrence count; handy as a reference scorer.
    Termcount,
    /// Spawn a process and speak the line protocol over its stdio.
    Cmd { command: String },
    /// Connect to a scorer listening on `host:port`.
    Addr { address: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub corpus_format: Option<TextFormat>,
    pub queries: Option<PathBuf>,
    pub queries_format: Option<TextFormat>,
    pub qrels: Option<PathBuf>,
    pub subdoc: Option<PathBuf>,
    pub human_spans: Option<PathBuf>,
    /// Candidates from a TREC run file instead of first-stage BM25 retrieval.
    pub run_file: Option<PathBuf>,
    /// Prebuilt BM25 index; built from the corpus when absent.
    pub index: Option<PathBuf>,
    pub abbreviations: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,

    pub scorer: ScorerSpec,
    pub scorer_timeout_ms: u64,
    pub scorer_max_batch: usize,
    pub k1: f64,
    pub b: f64,

    pub k: usize,
    /// First-stage retrieval depth.
    pub depth: usize,
    pub granularity: Granularity,
    pub explainer: ExplainerKind,
    pub m: usize,
    /// Word-window size.
    pub w: usize,
    /// Word-window stride; defaults to `w`.
    pub stride: Option<usize>,
    pub n_per_sample: usize,
    pub num_samples: Option<usize>,
    pub exhaustive: bool,
    pub mean_normalized: bool,
    /// Score documents as the max over chunks of this many sentences.
    pub chunk_size: Option<usize>,
    pub seed: Option<u64>,
    pub metrics: Vec<Metric>,
    pub fidelity_m_max: usize,
    pub combination_budget: usize,

    pub workers: Option<usize>,
    pub cache: bool,
    pub out_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,

    pub m_list: Vec<usize>,
    pub w_list: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ext = ExternalConfig::default();
        let bm25 = Bm25Params::default();
        Self {
            corpus: None,
            corpus_format: None,
            queries: None,
            queries_format: None,
            qrels: None,
            subdoc: None,
            human_spans: None,
            run_file: None,
            index: None,
            abbreviations: None,
            stopwords: None,
            scorer: ScorerSpec::Bm25,
            scorer_timeout_ms: ext.timeout_ms,
            scorer_max_batch: ext.max_batch,
            k1: bm25.k1,
            b: bm25.b,
            k: 10,
            depth: 1000,
            granularity: Granularity::Sentence,
            explainer: ExplainerKind::Greedy,
            m: 3,
            w: 10,
            stride: None,
            n_per_sample: 1,
            num_samples: None,
            exhaustive: false,
            mean_normalized: false,
            chunk_size: None,
            seed: None,
            metrics: Metric::ALL.to_vec(),
            fidelity_m_max: 2,
            combination_budget: DEFAULT_COMBINATION_BUDGET,
            workers: None,
            cache: true,
            out_dir: None,
            checkpoint: None,
            m_list: Vec::new(),
            w_list: Vec::new(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load a TOML config. Relative paths inside it resolve against the
    /// file's directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.corpus,
            &mut cfg.queries,
            &mut cfg.qrels,
            &mut cfg.subdoc,
            &mut cfg.human_spans,
            &mut cfg.run_file,
            &mut cfg.index,
            &mut cfg.abbreviations,
            &mut cfg.stopwords,
            &mut cfg.out_dir,
            &mut cfg.checkpoint,
        ] {
            rebase(base, p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if self.m == 0 {
            return bad("m must be >= 1");
        }
        if self.depth < self.k {
            return bad("retrieval depth must be >= k");
        }
        if self.n_per_sample == 0 {
            return bad("n_per_sample must be >= 1");
        }
        if self.num_samples == Some(0) {
            return bad("num_samples must be >= 1");
        }
        if self.granularity == Granularity::WordWindow && (self.w == 0 || self.stride == Some(0)) {
            return bad("word windows need w >= 1 and stride >= 1");
        }
        if self.chunk_size == Some(0) {
            return bad("chunk_size must be >= 1");
        }
        if self.explainer == ExplainerKind::Greedy && self.granularity != Granularity::Sentence {
            return bad("the greedy explainer works on sentences only");
        }
        if self.fidelity_m_max == 0 || self.combination_budget == 0 {
            return bad("fidelity_m_max and combination_budget must be >= 1");
        }
        if self.metrics.is_empty() {
            return bad("no metrics selected");
        }
        if self.m_list.contains(&0) || self.w_list.contains(&0) {
            return bad("sweep lists must hold positive values");
        }
        if self.corpus.is_none() {
            return bad("no corpus given");
        }
        if self.queries.is_none() {
            return bad("no queries given");
        }
        if self.scorer_max_batch == 0 {
            return bad("scorer_max_batch must be >= 1");
        }
        Bm25Params::new(self.k1, self.b).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn bm25_params(&self) -> Result<Bm25Params> {
        Bm25Params::new(self.k1, self.b)
    }

    pub fn external_config(&self) -> ExternalConfig {
        ExternalConfig {
            timeout_ms: self.scorer_timeout_ms,
            max_batch: self.scorer_max_batch,
        }
    }

    /// Segmentation at the configured granularity, with word-window size `w`.
    pub fn segmentation_for(&self, w: usize) -> Segmentation {
        match self.granularity {
            Granularity::Sentence => Segmentation::Sentence,
            Granularity::WordWindow => Segmentation::WordWindow {
                w,
                stride: self.stride.unwrap_or(w),
            },
            Granularity::Chunk => Segmentation::Chunk {
                size: self.chunk_size.unwrap_or(DEFAULT_CHUNK_SIZE),
            },
        }
    }

    pub fn segmentation(&self) -> Segmentation {
        self.segmentation_for(self.w)
    }

    /// The `m` values to sweep: `m_list`, or the single configured `m`.
    pub fn sweep_m(&self) -> Vec<usize> {
        let mut v = if self.m_list.is_empty() {
            vec![self.m]
        } else {
            self.m_list.clone()
        };
        v.sort_unstable();
        v.dedup();
        v
    }

    /// The `w` values to sweep. Only word windows have a width; for other
    /// granularities a non-trivial `w_list` is ignored with a warning.
    pub fn sweep_w(&self) -> Vec<Option<usize>> {
        if self.granularity != Granularity::WordWindow {
            if !self.w_list.is_empty() {
                warn!(
                    "w_list {:?} ignored: {} granularity has no window width",
                    self.w_list, self.granularity
                );
            }
            return vec![None];
        }
        let mut v = if self.w_list.is_empty() {
            vec![self.w]
        } else {
            self.w_list.clone()
        };
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(Some).collect()
    }

    /// Report parameter block for a given `(m, w)` point.
    pub fn report_params(&self, seed: u64, m: usize, w: Option<usize>) -> ReportParams {
        let windowed = self.granularity == Granularity::WordWindow;
        let w = if windowed { w.or(Some(self.w)) } else { None };
        let sampled = self.explainer == ExplainerKind::Sampled;
        ReportParams {
            k: self.k,
            depth: self.depth,
            m,
            granularity: self.granularity,
            explainer: self.explainer,
            w,
            stride: if windowed { self.stride.or(w) } else { None },
            n_per_sample: if sampled { self.n_per_sample } else { 1 },
            num_samples: if sampled { self.num_samples } else { None },
            exhaustive: sampled && self.exhaustive,
            mean_normalized: sampled && self.mean_normalized,
            chunk_size: self.chunk_size,
            seed,
            metrics: self.metrics.clone(),
            fidelity_m_max: self.fidelity_m_max,
            combination_budget: self.combination_budget,
        }
    }
}

/// Worker-pool size: the requested count (or all cores), capped by
/// `XRANK_WORKERS` when that is set.
pub fn effective_workers(requested: Option<usize>) -> usize {
    let base = requested.filter(|&n| n > 0).unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    });
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(cap) if cap > 0 => base.min(cap),
            _ => {
                warn!("ignoring {WORKERS_ENV}={v:?}: not a positive integer");
                base
            }
        },
        Err(_) => base,
    }
}
