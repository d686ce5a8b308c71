//! The relevance function θ(Q, D).
//!
//! Every scorer sits behind [`ScorerHandle::score_batch`], so explainers and
//! metrics never branch on what kind of scorer they are driving.

mod bm25;
mod external;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bm25::{
    bm25_score, build_index, idf, read_index, retrieve_topk, write_index, Bm25Params, Bm25Scorer,
    InvertedIndex, Posting, INDEX_FORMAT_VERSION,
};
pub use external::{Endpoint, ExternalConfig, ExternalScorer, ScoreRequest, ScoreResponse};

use crate::error::{Error, Result, ScorerError};
use crate::segmentation::{token_texts, SentenceSplitter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Bm25,
    External,
    Synthetic,
}

/// A relevance scorer. Implementations must return one finite score per text,
/// aligned with the input order.
pub trait Scorer: Send + Sync {
    fn kind(&self) -> ScorerKind;

    /// Stable identity used to key score caches.
    fn fingerprint(&self) -> String;

    /// Largest number of texts sent in one call.
    fn max_batch(&self) -> usize {
        usize::MAX
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn score_texts(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>>;

    /// Score several batches. Scorers that can overlap requests override this.
    fn score_batches(&self, query: &str, batches: &[&[&str]]) -> Result<Vec<Vec<f64>>> {
        batches.iter().map(|b| self.score_texts(query, b)).collect()
    }
}

/// Cheaply clonable handle to a shared scorer.
#[derive(Clone)]
pub struct ScorerHandle {
    inner: Arc<dyn Scorer>,
}

impl fmt::Debug for ScorerHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScorerHandle")
            .field("kind", &self.kind())
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

impl ScorerHandle {
    pub fn new<S: Scorer + 'static>(scorer: S) -> Self {
        Self {
            inner: Arc::new(scorer),
        }
    }

    pub fn from_arc(inner: Arc<dyn Scorer>) -> Self {
        Self { inner }
    }

    pub fn kind(&self) -> ScorerKind {
        self.inner.kind()
    }

    pub fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    pub fn max_batch(&self) -> usize {
        self.inner.max_batch().max(1)
    }

    pub fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    pub fn inner(&self) -> &Arc<dyn Scorer> {
        &self.inner
    }

    /// Score `texts` for `query`, splitting into batches of at most
    /// [`max_batch`](Self::max_batch) texts.
    pub fn score_batch<S: AsRef<str>>(&self, query: &str, texts: &[S]) -> Result<Vec<f64>> {
        if texts.is_empty() {
            return Err(Error::Argument(
                "score_batch needs at least one text".into(),
            ));
        }
        let refs: Vec<&str> = texts.iter().map(AsRef::as_ref).collect();
        let batches: Vec<&[&str]> = refs.chunks(self.max_batch()).collect();
        let results = self.inner.score_batches(query, &batches)?;
        let mut scores = Vec::with_capacity(refs.len());
        for (batch, result) in batches.iter().zip(results) {
            if result.len() != batch.len() {
                return Err(ScorerError::Protocol {
                    request_id: 0,
                    message: format!("expected {} scores, got {}", batch.len(), result.len()),
                }
                .into());
            }
            scores.extend(result);
        }
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::State(format!(
                "scorer produced non-finite score at position {bad}"
            )));
        }
        Ok(scores)
    }

    pub fn score(&self, query: &str, text: &str) -> Result<f64> {
        Ok(self.score_batch(query, &[text])?[0])
    }
}

/// Synthetic additive scorer: the number of text tokens that also occur in the query.
#[derive(Debug, Clone, Copy, Default)]
pub struct TermCountScorer;

impl TermCountScorer {
    pub fn count(query: &str, text: &str) -> f64 {
        let q: std::collections::HashSet<String> = token_texts(query).into_iter().collect();
        token_texts(text).iter().filter(|t| q.contains(*t)).count() as f64
    }
}

impl Scorer for TermCountScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Synthetic
    }

    fn fingerprint(&self) -> String {
        "termcount".into()
    }

    fn score_texts(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>> {
        Ok(texts.iter().map(|t| Self::count(query, t)).collect())
    }
}

/// Score a document as the maximum over its non-overlapping chunks of
/// `chunk_size` sentences. Returns the score and the index of the first chunk
/// attaining it.
pub fn score_document_chunked(
    scorer: &ScorerHandle,
    splitter: &SentenceSplitter,
    query: &str,
    doc_id: &str,
    text: &str,
    chunk_size: usize,
) -> Result<(f64, usize)> {
    let chunks = splitter.chunk(doc_id, text, chunk_size)?;
    if chunks.is_empty() {
        return Err(Error::Argument(format!(
            "document {doc_id} has no text to chunk"
        )));
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let scores = scorer.score_batch(query, &texts)?;
    Ok(argmax_first(&scores))
}

/// Maximum value and the first index holding it.
pub(crate) fn argmax_first(scores: &[f64]) -> (f64, usize) {
    let mut best = (scores[0], 0);
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > best.0 {
            best = (s, i);
        }
    }
    best
}

/// Whole-text or chunked-max scoring of document-like texts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DocScoring {
    Plain,
    ChunkedMax { chunk_size: usize },
}

/// θ(Q, ·) over arbitrary texts: the original documents, masked residuals and
/// pseudo-documents all go through here.
#[derive(Debug, Clone)]
pub struct DocumentScorer {
    pub handle: ScorerHandle,
    pub mode: DocScoring,
    pub splitter: SentenceSplitter,
}

impl DocumentScorer {
    pub fn plain(handle: ScorerHandle) -> Self {
        Self {
            handle,
            mode: DocScoring::Plain,
            splitter: SentenceSplitter::default(),
        }
    }

    pub fn chunked(handle: ScorerHandle, chunk_size: usize) -> Self {
        Self {
            handle,
            mode: DocScoring::ChunkedMax { chunk_size },
            splitter: SentenceSplitter::default(),
        }
    }

    pub fn with_splitter(mut self, splitter: SentenceSplitter) -> Self {
        self.splitter = splitter;
        self
    }

    /// Score every text with one batched scorer call. Under chunked scoring a
    /// text with no sentences is scored as-is.
    pub fn score_texts<S: AsRef<str>>(&self, query: &str, texts: &[S]) -> Result<Vec<f64>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        match self.mode {
            DocScoring::Plain => self.handle.score_batch(query, texts),
            DocScoring::ChunkedMax { chunk_size } => {
                let mut flat: Vec<String> = Vec::new();
                let mut ranges = Vec::with_capacity(texts.len());
                for t in texts {
                    let chunks = self.splitter.chunk("", t.as_ref(), chunk_size)?;
                    let begin = flat.len();
                    if chunks.is_empty() {
                        flat.push(t.as_ref().to_string());
                    } else {
                        flat.extend(chunks.into_iter().map(|c| c.text));
                    }
                    ranges.push(begin..flat.len());
                }
                let scores = self.handle.score_batch(query, &flat)?;
                Ok(ranges
                    .into_iter()
                    .map(|r| argmax_first(&scores[r]).0)
                    .collect())
            }
        }
    }

    pub fn score(&self, query: &str, text: &str) -> Result<f64> {
        Ok(self.score_texts(query, &[text])?[0])
    }
}
