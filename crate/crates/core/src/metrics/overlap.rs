//! Text-overlap measures: cosine similarity, MER and span Jaccard.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus_io::{parse_word_list, RankedList, RelevanceStore};
use crate::error::{Error, Result};
use crate::rationales::ExplanationMap;
use crate::segmentation::token_texts;

const DEFAULT_STOPWORDS: &str = include_str!("../../data/stopwords_en.txt");

/// Term-frequency cosine similarity with stopword removal.
#[derive(Debug, Clone)]
pub struct CosineSimilarity {
    stopwords: HashSet<String>,
}

impl Default for CosineSimilarity {
    /// Uses the bundled 127-word English stopword list.
    fn default() -> Self {
        Self::with_stopwords(parse_word_list(DEFAULT_STOPWORDS))
    }
}

impl CosineSimilarity {
    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stopwords: words
                .into_iter()
                .map(|w| w.as_ref().to_lowercase())
                .collect(),
        }
    }

    pub fn without_stopwords() -> Self {
        Self {
            stopwords: HashSet::new(),
        }
    }

    pub fn stopword_count(&self) -> usize {
        self.stopwords.len()
    }

    fn vector(&self, text: &str) -> HashMap<String, u64> {
        let mut v = HashMap::new();
        for t in token_texts(text) {
            if !self.stopwords.contains(&t) {
                *v.entry(t).or_insert(0) += 1;
            }
        }
        v
    }

    /// Cosine of the two texts' term-frequency vectors, in `[0, 1]`. Zero if
    /// either vector is empty.
    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        let va = self.vector(a);
        let vb = self.vector(b);
        if va.is_empty() || vb.is_empty() {
            return 0.0;
        }
        let (small, large) = if va.len() <= vb.len() {
            (&va, &vb)
        } else {
            (&vb, &va)
        };
        let dot: u64 = small
            .iter()
            .map(|(t, x)| x * large.get(t).copied().unwrap_or(0))
            .sum();
        let na: u64 = va.values().map(|x| x * x).sum();
        let nb: u64 = vb.values().map(|x| x * x).sum();
        (dot as f64 / (na as f64 * nb as f64).sqrt()).min(1.0)
    }

    /// `max_j ω(rationale, passage_j)`, or 0 when there are no passages.
    pub fn best_match(&self, rationale: &str, passages: &[String]) -> f64 {
        passages
            .iter()
            .map(|p| self.similarity(rationale, p))
            .fold(0.0, f64::max)
    }
}

/// Cosine similarity with the default stopword list.
pub fn cosine_similarity(a: &str, b: &str) -> f64 {
    CosineSimilarity::default().similarity(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MerResult {
    pub mer: f64,
    /// Per-query contribution `(1 / (m k)) Σ_i Σ_j max_j' ω`, in list order.
    pub per_query: Vec<(String, f64)>,
}

/// Mean explanation relevance over the top-`k` of each list using the first
/// `m` rationales of each document. Missing rationale slots and documents
/// with no relevant passages contribute zero; the normaliser stays `m k`.
pub fn mer(
    lists: &[RankedList],
    explanations: &ExplanationMap,
    relevance: &RelevanceStore,
    k: usize,
    m: usize,
    omega: &CosineSimilarity,
) -> Result<MerResult> {
    if k == 0 || m == 0 {
        return Err(Error::Argument("MER needs k >= 1 and m >= 1".into()));
    }
    let mut per_query = Vec::with_capacity(lists.len());
    for list in lists {
        let mut sum = 0.0;
        for doc_id in list.doc_ids().take(k) {
            let key = (list.query_id.clone(), doc_id.to_string());
            let expl = explanations.get(&key).ok_or_else(|| {
                Error::Integrity(format!("no explanation for ({}, {doc_id})", list.query_id))
            })?;
            let passages = relevance.relevant_passages(&list.query_id, doc_id);
            if passages.is_empty() {
                continue;
            }
            for text in expl.texts().take(m) {
                sum += omega.best_match(text, passages);
            }
        }
        per_query.push((list.query_id.clone(), sum / (m * k) as f64));
    }
    let mer = if per_query.is_empty() {
        0.0
    } else {
        per_query.iter().map(|(_, v)| v).sum::<f64>() / per_query.len() as f64
    };
    Ok(MerResult { mer, per_query })
}

fn token_set<'a>(texts: impl IntoIterator<Item = &'a str>) -> HashSet<String> {
    texts.into_iter().flat_map(token_texts).collect()
}

/// Jaccard overlap between the token sets of machine rationales and human
/// spans. Zero when no human spans are available.
pub fn jaccard_spans<'a>(machine: impl IntoIterator<Item = &'a str>, human: &[String]) -> f64 {
    let h = token_set(human.iter().map(String::as_str));
    if h.is_empty() {
        return 0.0;
    }
    let e = token_set(machine);
    let inter = e.intersection(&h).count();
    let union = e.union(&h).count();
    inter as f64 / union as f64
}

/// Mean Jaccard per query over its top-`k` documents.
pub fn jaccard_per_query(
    lists: &[RankedList],
    explanations: &ExplanationMap,
    relevance: &RelevanceStore,
    k: usize,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for list in lists {
        let docs: Vec<&str> = list.doc_ids().take(k).collect();
        if docs.is_empty() {
            continue;
        }
        let mut sum = 0.0;
        for doc_id in &docs {
            let expl = explanations
                .get(&(list.query_id.clone(), doc_id.to_string()))
                .ok_or_else(|| {
                    Error::Integrity(format!("no explanation for ({}, {doc_id})", list.query_id))
                })?;
            sum += jaccard_spans(expl.texts(), relevance.human_spans(&list.query_id, doc_id));
        }
        out.insert(list.query_id.clone(), sum / docs.len() as f64);
    }
    Ok(out)
}
