//! Evaluation metrics and the report they are collected into.

mod consistency;
mod correlation;
mod overlap;
mod relevance;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use consistency::{consistency_pool, ConsistencyPool};
pub use correlation::{
    kendall_tau, kendall_tau_orderings, mrc, pearson, query_tau, MrcResult, QueryTau, Rescore,
    TauResult,
};
pub use overlap::{
    cosine_similarity, jaccard_per_query, jaccard_spans, mer, CosineSimilarity, MerResult,
};
pub use relevance::{ndcg_at_k, NdcgResult};

use crate::error::{Error, Result};
use crate::rationales::ExplainerKind;
use crate::segmentation::Granularity;

/// A metric that can be switched on with `--metrics`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    Mrc,
    Mer,
    /// Consistency pooling; also reports span-combination fidelity.
    Sc,
    Jaccard,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::Ndcg,
        Metric::Mrc,
        Metric::Mer,
        Metric::Sc,
        Metric::Jaccard,
    ];

    /// Parse a comma-separated list; duplicates collapse, order is canonical.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Metric = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(Error::Argument("empty metric list".into()));
        }
        out.sort();
        Ok(out)
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ndcg" => Ok(Metric::Ndcg),
            "mrc" => Ok(Metric::Mrc),
            "mer" => Ok(Metric::Mer),
            "sc" | "s_c" => Ok(Metric::Sc),
            "jaccard" => Ok(Metric::Jaccard),
            other => Err(Error::Argument(format!(
                "unknown metric {other:?} (expected mrc, mer, ndcg, sc, jaccard)"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ndcg => "ndcg",
            Metric::Mrc => "mrc",
            Metric::Mer => "mer",
            Metric::Sc => "sc",
            Metric::Jaccard => "jaccard",
        })
    }
}

/// Every parameter that influences report values. Scorer identity is left
/// out on purpose so that equivalent scorers yield identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub k: usize,
    pub depth: usize,
    pub m: usize,
    pub granularity: Granularity,
    pub explainer: ExplainerKind,
    pub w: Option<usize>,
    pub stride: Option<usize>,
    pub n_per_sample: usize,
    pub num_samples: Option<usize>,
    pub exhaustive: bool,
    pub mean_normalized: bool,
    pub chunk_size: Option<usize>,
    pub seed: u64,
    pub metrics: Vec<Metric>,
    pub fidelity_m_max: usize,
    pub combination_budget: usize,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            k: 10,
            depth: 1000,
            m: 3,
            granularity: Granularity::Sentence,
            explainer: ExplainerKind::Greedy,
            w: None,
            stride: None,
            n_per_sample: 1,
            num_samples: None,
            exhaustive: false,
            mean_normalized: false,
            chunk_size: None,
            seed: 0,
            metrics: Metric::ALL.to_vec(),
            fidelity_m_max: 2,
            combination_budget: crate::rationales::DEFAULT_COMBINATION_BUDGET,
        }
    }
}

/// Per-query metric values; `None` means not computed or undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub n_docs: usize,
    pub ndcg: Option<f64>,
    /// This query's tau (its MRC contribution).
    pub mrc: Option<f64>,
    pub mer: Option<f64>,
    pub s_c: Option<f64>,
    /// Mean relative score over masked span combinations.
    pub fidelity: Option<f64>,
    pub jaccard: Option<f64>,
    pub degenerate_docs: Vec<String>,
    pub truncated_docs: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values
        .flatten()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Arithmetic means over queries whose value is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub ndcg: Option<f64>,
    pub mrc: Option<f64>,
    pub mer: Option<f64>,
    pub s_c: Option<f64>,
    pub fidelity: Option<f64>,
    pub jaccard: Option<f64>,
}

impl AggregateMetrics {
    pub fn from_queries(queries: &[QueryMetrics]) -> Self {
        Self {
            ndcg: mean_defined(queries.iter().map(|q| q.ndcg)),
            mrc: mean_defined(queries.iter().map(|q| q.mrc)),
            mer: mean_defined(queries.iter().map(|q| q.mer)),
            s_c: mean_defined(queries.iter().map(|q| q.s_c)),
            fidelity: mean_defined(queries.iter().map(|q| q.fidelity)),
            jaccard: mean_defined(queries.iter().map(|q| q.jaccard)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Exclusions {
    /// Documents whose base score was zero (no occlusion signal).
    pub degenerate_docs: usize,
    /// Queries left out of MRC for having fewer than two scorable documents.
    pub mrc_excluded_queries: Vec<String>,
    /// Queries without any positively judged document (nDCG defined as 0).
    pub ndcg_no_relevant_queries: Vec<String>,
    /// Documents left out of consistency pooling.
    pub consistency_excluded_docs: usize,
    /// Metrics requested but skipped for lack of inputs, with the reason.
    pub skipped_metrics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub params: ReportParams,
    pub per_query: Vec<QueryMetrics>,
    pub aggregate: AggregateMetrics,
    pub exclusions: Exclusions,
}
