//! End-to-end evaluation runs: retrieve or read candidates, rerank with θ,
//! explain the top-k, rescore pseudo-documents, compute metrics, report.
//!
//! All parallel work is collected in input order, so reports do not depend
//! on the worker count.

mod cache;
mod checkpoint;
mod config;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::ScoreCache;
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{effective_workers, RunConfig, ScorerSpec, DEFAULT_CHUNK_SIZE, WORKERS_ENV};

use crate::corpus_io::{
    load_corpus, load_human_spans, load_qrels, load_queries, load_subdoc_relevance, load_word_list,
    read_run, write_report, write_run, Corpus, Document, Query, RankedList, RelevanceStore,
    ReportFormat, TextFormat, NULL_MARKER,
};
use crate::error::{Error, Result};
use crate::metrics::{
    consistency_pool, jaccard_per_query, mer, ndcg_at_k, query_tau, AggregateMetrics,
    CosineSimilarity, EvalReport, Exclusions, Metric, QueryMetrics, Rescore,
};
use crate::rationales::{
    ablate_combinations, build_pseudo_document, document_seed, explain_greedy, explain_sampled,
    ExplainerKind, ExplanationMap, ExplanationParams, ExplanationRecord, ExplanationSet,
    SampledOptions,
};
use crate::scoring::{
    build_index, read_index, retrieve_topk, Bm25Scorer, DocumentScorer, Endpoint, ExternalScorer,
    InvertedIndex, ScorerHandle, TermCountScorer,
};
use crate::segmentation::{Segmentation, SentenceSplitter};

/// Salt separating the ablation seed stream from the explanation one.
const ABLATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// A fully loaded run: inputs, scorer and worker pool.
pub struct Session {
    config: RunConfig,
    seed: u64,
    corpus: Corpus,
    queries: Vec<Query>,
    relevance: RelevanceStore,
    have_qrels: bool,
    have_subdoc: bool,
    have_spans: bool,
    index: Option<Arc<InvertedIndex>>,
    scorer: DocumentScorer,
    cache: Option<Arc<ScoreCache>>,
    cosine: CosineSimilarity,
    pool: rayon::ThreadPool,
}

fn format_of(explicit: Option<TextFormat>, path: &Path) -> TextFormat {
    explicit.unwrap_or_else(|| TextFormat::from_path(path))
}

/// Optional side files: a configured but missing file is skipped with a warning.
fn optional_file(path: &Option<PathBuf>, what: &str) -> Option<PathBuf> {
    let p = path.as_ref()?;
    if p.exists() {
        Some(p.clone())
    } else {
        warn!(
            "{what} file {} not found; dependent metrics will be null",
            p.display()
        );
        None
    }
}

/// Resolve the run seed, drawing and logging a random one if none was given.
pub fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rand::random::<u64>();
        warn!("no seed given; using random seed {s}");
        s
    })
}

fn connect_scorer(config: &RunConfig, index: Option<&Arc<InvertedIndex>>) -> Result<ScorerHandle> {
    Ok(match &config.scorer {
        ScorerSpec::Bm25 => {
            let index = index.ok_or_else(|| Error::State("BM25 scorer without an index".into()))?;
            ScorerHandle::new(Bm25Scorer::new(index.clone(), config.bm25_params()?)?)
        }
        ScorerSpec::Termcount => ScorerHandle::new(TermCountScorer),
        ScorerSpec::Cmd { command } => ScorerHandle::new(ExternalScorer::connect(
            Endpoint::Command(command.clone()),
            config.external_config(),
        )?),
        ScorerSpec::Addr { address } => ScorerHandle::new(ExternalScorer::connect(
            Endpoint::Tcp(address.clone()),
            config.external_config(),
        )?),
    })
}

impl Session {
    /// Validate `config`, load every input and connect the scorer.
    pub fn open(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = resolve_seed(config.seed);
        let corpus_path = config.corpus.as_ref().expect("validated");
        let queries_path = config.queries.as_ref().expect("validated");
        let corpus = load_corpus(corpus_path, format_of(config.corpus_format, corpus_path))?;
        let queries = load_queries(queries_path, format_of(config.queries_format, queries_path))?;
        info!(
            "loaded {} documents and {} queries",
            corpus.len(),
            queries.len()
        );

        let splitter = match &config.abbreviations {
            Some(p) => SentenceSplitter::with_abbreviations(load_word_list(p)?),
            None => SentenceSplitter::default(),
        };
        let cosine = match &config.stopwords {
            Some(p) => CosineSimilarity::with_stopwords(load_word_list(p)?),
            None => CosineSimilarity::default(),
        };

        let have_qrels = config.qrels.is_some();
        let mut relevance = match &config.qrels {
            Some(p) => load_qrels(p)?,
            None => RelevanceStore::new(),
        };
        let subdoc = optional_file(&config.subdoc, "sub-document relevance");
        if let Some(p) = &subdoc {
            load_subdoc_relevance(p, Some(&corpus), &mut relevance)?;
        }
        let spans = optional_file(&config.human_spans, "human span");
        if let Some(p) = &spans {
            load_human_spans(p, Some(&corpus), &mut relevance)?;
        }

        let needs_index = config.scorer == ScorerSpec::Bm25 || config.run_file.is_none();
        let index = if needs_index {
            let idx = match &config.index {
                Some(p) => read_index(p)?,
                None => build_index(&corpus),
            };
            Some(Arc::new(idx))
        } else {
            None
        };

        let workers = effective_workers(config.workers);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::State(format!("cannot start worker pool: {e}")))?;

        let handle = connect_scorer(config, index.as_ref())?;
        let (handle, cache) = if config.cache {
            let c = Arc::new(ScoreCache::new(handle));
            (ScorerHandle::from_arc(c.clone()), Some(c))
        } else {
            (handle, None)
        };
        let scorer = match config.chunk_size {
            Some(size) => DocumentScorer::chunked(handle, size),
            None => DocumentScorer::plain(handle),
        }
        .with_splitter(splitter);
        info!(
            "scorer {} with {workers} workers, seed {seed}",
            scorer.handle.fingerprint()
        );

        Ok(Self {
            config: config.clone(),
            seed,
            corpus,
            queries,
            relevance,
            have_qrels,
            have_subdoc: subdoc.is_some(),
            have_spans: spans.is_some(),
            index,
            scorer,
            cache,
            cosine,
            pool,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn queries(&self) -> &[Query] {
        &self.queries
    }

    pub fn relevance(&self) -> &RelevanceStore {
        &self.relevance
    }

    pub fn scorer(&self) -> &DocumentScorer {
        &self.scorer
    }

    pub fn cache(&self) -> Option<&ScoreCache> {
        self.cache.as_deref()
    }

    fn query(&self, query_id: &str) -> Result<&Query> {
        self.queries
            .iter()
            .find(|q| q.query_id == query_id)
            .ok_or_else(|| Error::Integrity(format!("unknown query {query_id}")))
    }

    fn document(&self, doc_id: &str) -> Result<&Document> {
        self.corpus
            .get(doc_id)
            .ok_or_else(|| Error::Integrity(format!("document {doc_id} is not in the corpus")))
    }

    /// First-stage candidates to depth `depth`, one list per query in query
    /// order: BM25 retrieval, or the configured run file.
    pub fn candidates(&self) -> Result<Vec<RankedList>> {
        let depth = self.config.depth;
        if let Some(path) = &self.config.run_file {
            let mut by_query: BTreeMap<String, RankedList> = read_run(path)?
                .into_iter()
                .map(|l| (l.query_id.clone(), l))
                .collect();
            let lists: Vec<RankedList> = self
                .queries
                .iter()
                .map(|q| {
                    let mut list = by_query.remove(&q.query_id).unwrap_or_else(|| RankedList {
                        query_id: q.query_id.clone(),
                        entries: Vec::new(),
                    });
                    list.entries.truncate(depth);
                    list
                })
                .collect();
            for qid in by_query.keys() {
                warn!("run file has query {qid} which is not in the query set; ignored");
            }
            for list in &lists {
                for d in list.doc_ids() {
                    self.document(d)?;
                }
            }
            return Ok(lists);
        }
        let index = self
            .index
            .as_ref()
            .expect("index is built when no run file is given");
        let params = self.config.bm25_params()?;
        self.pool.install(|| {
            self.queries
                .par_iter()
                .map(|q| retrieve_topk(index, &params, &q.query_id, &q.text, depth))
                .collect()
        })
    }

    /// Rescore candidates with θ and keep the top `k` of each list.
    pub fn rerank(&self, candidates: &[RankedList]) -> Result<Vec<RankedList>> {
        let k = self.config.k;
        self.pool.install(|| {
            candidates
                .par_iter()
                .map(|list| {
                    if list.is_empty() {
                        return Ok(RankedList {
                            query_id: list.query_id.clone(),
                            entries: Vec::new(),
                        });
                    }
                    let query = self.query(&list.query_id)?;
                    let docs: Vec<&Document> = list
                        .doc_ids()
                        .map(|d| self.document(d))
                        .collect::<Result<_>>()?;
                    let texts: Vec<&str> = docs.iter().map(|d| d.text.as_str()).collect();
                    let scores = self.scorer.score_texts(&query.text, &texts)?;
                    let scored = docs.iter().map(|d| d.doc_id.clone()).zip(scores).collect();
                    Ok(RankedList::from_scores(&list.query_id, scored, k))
                })
                .collect()
        })
    }

    /// Explain one document with the configured explainer.
    pub fn explain_document(
        &self,
        query: &Query,
        doc: &Document,
        segmentation: &Segmentation,
        m: usize,
    ) -> Result<ExplanationSet> {
        let segments = segmentation.segment(&self.scorer.splitter, doc)?;
        if segments.is_empty() {
            // Nothing to occlude: no signal, like a zero-score document.
            let base_score = self.scorer.score(&query.text, &doc.text)?;
            return Ok(ExplanationSet {
                query_id: query.query_id.clone(),
                doc_id: doc.doc_id.clone(),
                granularity: segmentation.granularity(),
                rationales: Vec::new(),
                params: self.explanation_params(segmentation, m, None),
                base_score,
                degenerate: true,
                truncated: false,
                num_segments: 0,
            });
        }
        match self.config.explainer {
            ExplainerKind::Greedy => explain_greedy(query, doc, &self.scorer, m),
            ExplainerKind::Sampled => {
                let opts = SampledOptions {
                    m,
                    n_per_sample: self.config.n_per_sample,
                    num_samples: self.config.num_samples,
                    seed: document_seed(self.seed, &query.query_id, &doc.doc_id),
                    exhaustive: self.config.exhaustive,
                    mean_normalized: self.config.mean_normalized,
                };
                explain_sampled(query, doc, &self.scorer, segmentation, &opts)
            }
        }
    }

    fn explanation_params(
        &self,
        segmentation: &Segmentation,
        m: usize,
        seed: Option<u64>,
    ) -> ExplanationParams {
        let (w, stride) = match *segmentation {
            Segmentation::WordWindow { w, stride } => (Some(w), Some(stride)),
            _ => (None, None),
        };
        ExplanationParams {
            explainer: self.config.explainer,
            m,
            w,
            stride,
            n_per_sample: None,
            num_samples: None,
            seed,
            exhaustive: false,
            mean_normalized: false,
        }
    }

    /// Hash of everything that determines an explanation, for checkpoint keys.
    fn explanation_hash(&self, segmentation: &Segmentation, m: usize) -> String {
        let c = &self.config;
        let key = serde_json::json!({
            "scorer": self.scorer.handle.fingerprint(),
            "doc_scoring": self.scorer.mode,
            "corpus": c.corpus,
            "queries": c.queries,
            "run_file": c.run_file,
            "abbreviations": c.abbreviations,
            "k": c.k,
            "depth": c.depth,
            "k1": c.k1,
            "b": c.b,
            "segmentation": segmentation,
            "explainer": c.explainer,
            "m": m,
            "n_per_sample": c.n_per_sample,
            "num_samples": c.num_samples,
            "exhaustive": c.exhaustive,
            "mean_normalized": c.mean_normalized,
            "seed": self.seed,
        });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Explain the top-`k` documents of every list with up to `m` rationales.
    ///
    /// With a checkpoint path, completed explanations are appended as they
    /// finish and reloaded on the next run with the same configuration. The
    /// file is left in place; callers remove it once the whole run succeeded.
    /// On failure the remaining jobs are skipped and [`Error::Aborted`]
    /// reports how far the run got.
    pub fn explain(
        &self,
        lists: &[RankedList],
        segmentation: &Segmentation,
        m: usize,
        checkpoint: Option<&Path>,
    ) -> Result<ExplanationMap> {
        let jobs: Vec<(&str, &str)> = lists
            .iter()
            .flat_map(|l| l.doc_ids().map(move |d| (l.query_id.as_str(), d)))
            .collect();
        let total = jobs.len();

        let (cp, previous) = match checkpoint {
            Some(path) => {
                let (cp, prev) = Checkpoint::open(path, &self.explanation_hash(segmentation, m))?;
                (Some(cp), prev)
            }
            None => (None, Vec::new()),
        };
        let mut done: HashMap<(String, String), ExplanationSet> = previous
            .into_iter()
            .map(|r| {
                (
                    (r.query_id.clone(), r.doc_id.clone()),
                    ExplanationSet::from(r),
                )
            })
            .collect();

        let failed = AtomicBool::new(false);
        let completed = AtomicUsize::new(0);
        let results: Vec<Option<Result<ExplanationSet>>> = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(qid, did)| {
                    if done.contains_key(&(qid.to_string(), did.to_string())) {
                        return None;
                    }
                    if failed.load(Ordering::SeqCst) {
                        return None;
                    }
                    let res = (|| {
                        let set = self.explain_document(
                            self.query(qid)?,
                            self.document(did)?,
                            segmentation,
                            m,
                        )?;
                        if let Some(cp) = &cp {
                            cp.append(&ExplanationRecord::from(&set))?;
                        }
                        Ok(set)
                    })();
                    match &res {
                        Ok(_) => {
                            completed.fetch_add(1, Ordering::SeqCst);
                        }
                        Err(_) => failed.store(true, Ordering::SeqCst),
                    }
                    Some(res)
                })
                .collect()
        });

        let resumed = done.len();
        let mut first_err = None;
        for (res, &(qid, did)) in results.into_iter().zip(&jobs) {
            match res {
                Some(Ok(set)) => {
                    done.insert((qid.to_string(), did.to_string()), set);
                }
                Some(Err(e)) if first_err.is_none() => first_err = Some(e),
                _ => {}
            }
        }
        if let Some(e) = first_err {
            return Err(Error::Aborted {
                completed: resumed + completed.load(Ordering::SeqCst),
                total,
                checkpoint: cp.as_ref().map(|c| c.path().to_path_buf()),
                source: Box::new(e),
            });
        }
        drop(cp);
        let mut out = ExplanationMap::new();
        for (qid, did) in jobs {
            let key = (qid.to_string(), did.to_string());
            let set = done.remove(&key).ok_or_else(|| {
                Error::State(format!("no explanation produced for ({qid}, {did})"))
            })?;
            out.insert(key, set);
        }
        Ok(out)
    }

    fn wants(&self, metric: Metric) -> bool {
        self.config.metrics.contains(&metric)
    }

    /// Compute every selected metric for `lists`, using the first `m`
    /// rationales of each explanation.
    pub fn evaluate(
        &self,
        lists: &[RankedList],
        explanations: &ExplanationMap,
        m: usize,
        w: Option<usize>,
    ) -> Result<EvalReport> {
        let k = self.config.k;
        let truncated: ExplanationMap = explanations
            .iter()
            .map(|(key, set)| (key.clone(), set.truncated_to(m)))
            .collect();
        let expl = |qid: &str, did: &str| {
            truncated
                .get(&(qid.to_string(), did.to_string()))
                .ok_or_else(|| Error::Integrity(format!("no explanation for ({qid}, {did})")))
        };

        let mut exclusions = Exclusions::default();
        let ndcg_on = self.wants(Metric::Ndcg) && self.have_qrels;
        let mer_on = self.wants(Metric::Mer) && self.have_subdoc;
        let jaccard_on = self.wants(Metric::Jaccard) && self.have_spans;
        if self.wants(Metric::Ndcg) && !ndcg_on {
            exclusions.skipped_metrics.push("ndcg: no qrels".into());
        }
        if self.wants(Metric::Mer) && !mer_on {
            warn!("MER requested without sub-document relevance; reporting {NULL_MARKER}");
            exclusions
                .skipped_metrics
                .push("mer: no sub-document relevance".into());
        }
        if self.wants(Metric::Jaccard) && !jaccard_on {
            exclusions
                .skipped_metrics
                .push("jaccard: no human spans".into());
        }

        let per_query: Vec<(QueryMetrics, Vec<String>, usize)> = self.pool.install(|| {
            lists
                .par_iter()
                .map(|list| -> Result<(QueryMetrics, Vec<String>, usize)> {
                    let qid = list.query_id.as_str();
                    let query = self.query(qid)?;
                    let mut sets = Vec::with_capacity(list.len());
                    for did in list.doc_ids() {
                        sets.push(expl(qid, did)?);
                    }
                    let degenerate_docs: Vec<String> = sets
                        .iter()
                        .filter(|s| s.degenerate)
                        .map(|s| s.doc_id.clone())
                        .collect();
                    let truncated_docs = sets.iter().filter(|s| s.truncated).count();

                    let ndcg = if ndcg_on {
                        Some(ndcg_at_k(list, self.relevance.grades_for(qid), k)?)
                    } else {
                        None
                    };

                    let mrc = if self.wants(Metric::Mrc) {
                        let live: Vec<&ExplanationSet> =
                            sets.iter().copied().filter(|s| !s.degenerate).collect();
                        let pseudo: Vec<String> = live
                            .iter()
                            .map(|s| build_pseudo_document(s).map(|p| p.text))
                            .collect::<Result<_>>()?;
                        let scores = self.scorer.score_texts(&query.text, &pseudo)?;
                        let mut rescored: BTreeMap<String, Rescore> = degenerate_docs
                            .iter()
                            .map(|d| (d.clone(), Rescore::Degenerate))
                            .collect();
                        for (s, score) in live.iter().zip(scores) {
                            rescored.insert(s.doc_id.clone(), Rescore::Score(score));
                        }
                        query_tau(list, &rescored)?.tau
                    } else {
                        None
                    };

                    let mer_value = if mer_on {
                        let r = mer(
                            std::slice::from_ref(list),
                            &truncated,
                            &self.relevance,
                            k,
                            m,
                            &self.cosine,
                        )?;
                        Some(r.per_query[0].1)
                    } else {
                        None
                    };

                    let jaccard = if jaccard_on && !list.is_empty() {
                        jaccard_per_query(
                            std::slice::from_ref(list),
                            &truncated,
                            &self.relevance,
                            k,
                        )?
                        .remove(qid)
                    } else {
                        None
                    };

                    let (s_c, fidelity, sc_excluded) = if self.wants(Metric::Sc) {
                        self.consistency(query, &sets)?
                    } else {
                        (None, None, 0)
                    };

                    let qm = QueryMetrics {
                        query_id: qid.to_string(),
                        n_docs: list.len(),
                        ndcg: ndcg.map(|r| r.value),
                        mrc,
                        mer: mer_value,
                        s_c,
                        fidelity,
                        jaccard,
                        degenerate_docs,
                        truncated_docs,
                    };
                    let no_rel = ndcg
                        .filter(|r| r.no_relevant)
                        .map(|_| vec![qid.to_string()])
                        .unwrap_or_default();
                    Ok((qm, no_rel, sc_excluded))
                })
                .collect::<Result<Vec<_>>>()
        })?;

        let mut queries = Vec::with_capacity(per_query.len());
        for (qm, no_rel, sc_excluded) in per_query {
            if self.wants(Metric::Mrc) && qm.mrc.is_none() {
                exclusions.mrc_excluded_queries.push(qm.query_id.clone());
            }
            exclusions.degenerate_docs += qm.degenerate_docs.len();
            exclusions.ndcg_no_relevant_queries.extend(no_rel);
            exclusions.consistency_excluded_docs += sc_excluded;
            queries.push(qm);
        }
        Ok(EvalReport {
            params: self.config.report_params(self.seed, m, w),
            aggregate: AggregateMetrics::from_queries(&queries),
            per_query: queries,
            exclusions,
        })
    }

    /// Consistency pooling and mean span fidelity over a query's documents.
    /// Returns `(S_c, fidelity, excluded document count)`.
    fn consistency(
        &self,
        query: &Query,
        sets: &[&ExplanationSet],
    ) -> Result<(Option<f64>, Option<f64>, usize)> {
        let mut masked: Vec<(String, Vec<f64>)> = Vec::with_capacity(sets.len());
        let mut fidelities = Vec::new();
        for set in sets {
            if set.degenerate || set.is_empty() {
                masked.push((set.doc_id.clone(), Vec::new()));
                continue;
            }
            let doc = self.document(&set.doc_id)?;
            let spans: Vec<_> = set.rationales.iter().map(|r| r.segment.clone()).collect();
            let seed = document_seed(self.seed ^ ABLATION_SALT, &query.query_id, &doc.doc_id);
            match ablate_combinations(
                query,
                doc,
                &self.scorer,
                &spans,
                self.config.fidelity_m_max,
                self.config.combination_budget,
                seed,
            ) {
                Ok(a) => {
                    let f: Vec<f64> = a.fidelity.iter().flatten().copied().collect();
                    if !f.is_empty() {
                        fidelities.push(f.iter().sum::<f64>() / f.len() as f64);
                    }
                    masked.push((set.doc_id.clone(), a.relative_scores().collect()));
                }
                Err(Error::DegenerateScore { .. }) => masked.push((set.doc_id.clone(), Vec::new())),
                Err(e) => return Err(e),
            }
        }
        let pool = consistency_pool(masked.iter().map(|(d, s)| (d.as_str(), s.as_slice())));
        let fidelity = (!fidelities.is_empty())
            .then(|| fidelities.iter().sum::<f64>() / fidelities.len() as f64);
        Ok((pool.s_c, fidelity, pool.excluded.len()))
    }
}

/// The outputs of one evaluation run.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    /// Reranked top-k lists, in query order.
    pub lists: Vec<RankedList>,
    pub explanations: ExplanationMap,
}

fn default_checkpoint(config: &RunConfig, name: &str) -> Option<PathBuf> {
    config
        .checkpoint
        .clone()
        .or_else(|| config.out_dir.as_ref().map(|d| d.join(name)))
}

/// Run the whole pipeline once with the configured `m` and `w`.
pub fn run_evaluation(config: &RunConfig) -> Result<Evaluation> {
    let session = Session::open(config)?;
    evaluate_session(&session)
}

pub fn evaluate_session(session: &Session) -> Result<Evaluation> {
    let config = session.config();
    let lists = session.rerank(&session.candidates()?)?;
    let segmentation = config.segmentation();
    let checkpoint = default_checkpoint(config, "checkpoint.jsonl");
    let explanations = session.explain(&lists, &segmentation, config.m, checkpoint.as_deref())?;
    let w = matches!(segmentation, Segmentation::WordWindow { .. }).then_some(config.w);
    let report = session
        .evaluate(&lists, &explanations, config.m, w)
        .map_err(|e| after_explanations(e, explanations.len(), checkpoint.as_deref()))?;
    discard_checkpoint(checkpoint.as_deref())?;
    Ok(Evaluation {
        report,
        lists,
        explanations,
    })
}

/// A failure after every explanation was saved is a partial failure.
fn after_explanations(e: Error, total: usize, checkpoint: Option<&Path>) -> Error {
    match checkpoint {
        Some(cp) => Error::Aborted {
            completed: total,
            total,
            checkpoint: Some(cp.to_path_buf()),
            source: Box::new(e),
        },
        None => e,
    }
}

/// Remove a checkpoint once the run it protects has finished.
pub fn discard_checkpoint(path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => match std::fs::remove_file(p) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(p, e)),
        },
        None => Ok(()),
    }
}

/// Write explanation records, one JSON object per line, in list order.
pub fn write_explanations(
    path: &Path,
    lists: &[RankedList],
    explanations: &ExplanationMap,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for list in lists {
        for did in list.doc_ids() {
            let key = (list.query_id.clone(), did.to_string());
            let set = explanations.get(&key).ok_or_else(|| {
                Error::Integrity(format!("no explanation for ({}, {did})", list.query_id))
            })?;
            let line = serde_json::to_string(&ExplanationRecord::from(set))
                .map_err(|e| Error::State(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_explanations(path: &Path) -> Result<ExplanationMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = ExplanationMap::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: ExplanationRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path.display().to_string(), i + 1, e.to_string()))?;
        out.insert((rec.query_id.clone(), rec.doc_id.clone()), rec.into());
    }
    Ok(out)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// File names written by [`write_evaluation`].
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TSV: &str = "report.tsv";
pub const EXPLANATIONS_JSONL: &str = "explanations.jsonl";
pub const RUN_TXT: &str = "run.txt";
pub const SWEEP_TSV: &str = "sweep.tsv";
pub const RUN_TAG: &str = "xrank";

/// Write `report.json`, `report.tsv`, `explanations.jsonl` and the reranked
/// `run.txt` into `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    create_dir(dir)?;
    write_report(&eval.report, &dir.join(REPORT_JSON), ReportFormat::Json)?;
    write_report(&eval.report, &dir.join(REPORT_TSV), ReportFormat::Tsv)?;
    write_explanations(
        &dir.join(EXPLANATIONS_JSONL),
        &eval.lists,
        &eval.explanations,
    )?;
    write_run(&eval.lists, &dir.join(RUN_TXT), RUN_TAG)
}

/// One `(m, w)` point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub m: usize,
    pub w: Option<usize>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

impl SweepPoint {
    pub fn ok(&self) -> bool {
        self.report.is_some()
    }

    pub fn file_stem(&self) -> String {
        match self.w {
            Some(w) => format!("report_m{}_w{w}", self.m),
            None => format!("report_m{}", self.m),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub points: Vec<SweepPoint>,
    pub lists: Vec<RankedList>,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.points.iter().filter(|p| !p.ok()).count()
    }
}

/// Evaluate every `(m, w)` point. Explanations are computed once per `w` at
/// the largest `m` and truncated for smaller ones (top-m selections are
/// prefix-closed). A failing point is recorded and the sweep moves on.
pub fn sweep(config: &RunConfig) -> Result<SweepOutcome> {
    let session = Session::open(config)?;
    sweep_session(&session)
}

pub fn sweep_session(session: &Session) -> Result<SweepOutcome> {
    let config = session.config();
    let ms = config.sweep_m();
    let ws = config.sweep_w();
    let m_max = *ms.last().expect("at least one m");
    let lists = session.rerank(&session.candidates()?)?;
    let mut points = Vec::with_capacity(ms.len() * ws.len());
    for &w in &ws {
        let segmentation = config.segmentation_for(w.unwrap_or(config.w));
        let name = match w {
            Some(w) => format!("checkpoint-w{w}.jsonl"),
            None => "checkpoint.jsonl".to_string(),
        };
        let checkpoint = default_checkpoint(config, &name);
        let explanations =
            match session.explain(&lists, &segmentation, m_max, checkpoint.as_deref()) {
                Ok(e) => e,
                Err(e) => {
                    warn!("sweep: explanations for w={w:?} failed: {e}");
                    points.extend(ms.iter().map(|&m| SweepPoint {
                        m,
                        w,
                        report: None,
                        error: Some(e.to_string()),
                    }));
                    continue;
                }
            };
        let mut all_ok = true;
        for &m in &ms {
            let point = match session.evaluate(&lists, &explanations, m, w) {
                Ok(r) => SweepPoint {
                    m,
                    w,
                    report: Some(r),
                    error: None,
                },
                Err(e) => {
                    warn!("sweep: point m={m} w={w:?} failed: {e}");
                    all_ok = false;
                    SweepPoint {
                        m,
                        w,
                        report: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            points.push(point);
        }
        if all_ok {
            discard_checkpoint(checkpoint.as_deref())?;
        }
    }
    Ok(SweepOutcome { points, lists })
}

pub const SWEEP_TSV_COLUMNS: [&str; 9] = [
    "m", "w", "status", "ndcg", "mrc", "mer", "s_c", "fidelity", "jaccard",
];

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| NULL_MARKER.to_string(), |x| format!("{x:.6}"))
}

/// Combined sweep table: one row per point with the aggregate metrics.
pub fn format_sweep_tsv<W: Write>(points: &[SweepPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", SWEEP_TSV_COLUMNS.join("\t"))?;
    for p in points {
        let w =
            p.w.map_or_else(|| NULL_MARKER.to_string(), |w| w.to_string());
        match &p.report {
            Some(r) => {
                let a = &r.aggregate;
                writeln!(
                    out,
                    "{}\t{w}\tok\t{}\t{}\t{}\t{}\t{}\t{}",
                    p.m,
                    cell(a.ndcg),
                    cell(a.mrc),
                    cell(a.mer),
                    cell(a.s_c),
                    cell(a.fidelity),
                    cell(a.jaccard)
                )?;
            }
            None => {
                let nulls = [NULL_MARKER; 6].join("\t");
                writeln!(out, "{}\t{w}\tfailed\t{nulls}", p.m)?;
            }
        }
    }
    Ok(())
}

/// Write `sweep.tsv` plus one JSON report per successful point.
pub fn write_sweep(dir: &Path, outcome: &SweepOutcome) -> Result<()> {
    create_dir(dir)?;
    let path = dir.join(SWEEP_TSV);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    format_sweep_tsv(&outcome.points, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&path, e))?;
    for p in &outcome.points {
        if let Some(r) = &p.report {
            write_report(
                r,
                &dir.join(format!("{}.json", p.file_stem())),
                ReportFormat::Json,
            )?;
            write_report(
                r,
                &dir.join(format!("{}.tsv", p.file_stem())),
                ReportFormat::Tsv,
            )?;
        }
    }
    write_run(&outcome.lists, &dir.join(RUN_TXT), RUN_TAG)
}
