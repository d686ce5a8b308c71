//! Occlusion explanations for a single (query, document) pair.
//!
//! A segment's weight φ is the relative change in θ(Q, D) when the segment is
//! masked out of the document. Two explainers are provided:
//!
//! - [`explain_sampled`] draws random groups of `n` segments, masks each group
//!   jointly, and credits every masked segment with `|θ(D) - θ(D')| / (n·|θ(D)|)`.
//!   Credits accumulate over draws; the top-`m` segments are the rationales.
//! - [`explain_greedy`] repeatedly removes the sentence whose occlusion causes
//!   the largest relative drop against the current residual document.
//!
//! Scores always go through a [`DocumentScorer`], so the same code explains
//! BM25, external rerankers and chunked max-aggregated document scorers.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus_io::{Document, Query};
use crate::error::{Error, Result};
use crate::scoring::DocumentScorer;
use crate::segmentation::{
    join_in_document_order, merge_ranges, remove_ranges, Granularity, Segment, Segmentation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    pub segment: Segment,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExplainerKind {
    Sampled,
    Greedy,
}

/// Parameters an explanation was produced with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplanationParams {
    pub explainer: ExplainerKind,
    pub m: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub w: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stride: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_per_sample: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub num_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub exhaustive: bool,
    #[serde(default)]
    pub mean_normalized: bool,
}

/// The rationales E for one retrieved document.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationSet {
    pub query_id: String,
    pub doc_id: String,
    pub granularity: Granularity,
    /// Sampled: descending weight, ties by position. Greedy: selection order.
    pub rationales: Vec<Rationale>,
    pub params: ExplanationParams,
    /// θ(Q, D) of the unmasked document.
    pub base_score: f64,
    /// θ(Q, D) was zero; every weight is zero and the set carries no signal.
    pub degenerate: bool,
    /// Greedy only: the residual scored zero before `m` picks; later picks carry weight 0.
    pub truncated: bool,
    pub num_segments: usize,
}

impl ExplanationSet {
    pub fn len(&self) -> usize {
        self.rationales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rationales.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.rationales.iter().map(|r| r.segment.text.as_str())
    }

    /// The first `m` rationales as a new set. Greedy fills are trailing
    /// zero-weight picks, so a prefix ending on a positive weight is not
    /// truncated.
    pub fn truncated_to(&self, m: usize) -> ExplanationSet {
        let mut out = self.clone();
        out.rationales.truncate(m);
        out.params.m = m;
        out.truncated = self.truncated && out.rationales.last().is_some_and(|r| r.weight == 0.0);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledOptions {
    pub m: usize,
    pub n_per_sample: usize,
    /// Number of draws; `None` means five per segment.
    pub num_samples: Option<usize>,
    pub seed: u64,
    /// Mask each segment alone exactly once instead of sampling.
    pub exhaustive: bool,
    /// Divide each accumulated weight by the number of draws that masked the segment.
    pub mean_normalized: bool,
}

impl Default for SampledOptions {
    fn default() -> Self {
        Self {
            m: 3,
            n_per_sample: 1,
            num_samples: None,
            seed: 0,
            exhaustive: false,
            mean_normalized: false,
        }
    }
}

pub const DEFAULT_SAMPLES_PER_SEGMENT: usize = 5;

/// Pick up to `m` indices by descending weight (ties: earlier position),
/// skipping segments that overlap one already picked.
fn select_top(segments: &[Segment], weights: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .total_cmp(&weights[a])
            .then_with(|| segments[a].start.cmp(&segments[b].start))
            .then_with(|| a.cmp(&b))
    });
    let mut picked: Vec<usize> = Vec::with_capacity(m);
    for i in order {
        if picked.len() == m {
            break;
        }
        if picked.iter().all(|&p| !segments[p].overlaps(&segments[i])) {
            picked.push(i);
        }
    }
    picked
}

fn mask_indices(doc: &Document, segments: &[Segment], indices: &[usize]) -> String {
    let ranges = merge_ranges(
        indices
            .iter()
            .map(|&i| (segments[i].start, segments[i].end))
            .collect(),
    );
    remove_ranges(&doc.text, &ranges)
}

fn degenerate_set(
    query: &Query,
    doc: &Document,
    segmentation: Granularity,
    segments: &[Segment],
    m: usize,
    params: ExplanationParams,
) -> ExplanationSet {
    let zeros = vec![0.0; segments.len()];
    let rationales = select_top(segments, &zeros, m)
        .into_iter()
        .map(|i| Rationale {
            segment: segments[i].clone(),
            weight: 0.0,
        })
        .collect();
    ExplanationSet {
        query_id: query.query_id.clone(),
        doc_id: doc.doc_id.clone(),
        granularity: segmentation,
        rationales,
        params,
        base_score: 0.0,
        degenerate: true,
        truncated: false,
        num_segments: segments.len(),
    }
}

/// Sampled occlusion explainer over any segmentation.
pub fn explain_sampled(
    query: &Query,
    doc: &Document,
    scorer: &DocumentScorer,
    segmentation: &Segmentation,
    opts: &SampledOptions,
) -> Result<ExplanationSet> {
    if opts.m == 0 {
        return Err(Error::Argument("m must be at least 1".into()));
    }
    let segments = segmentation.segment(&scorer.splitter, doc)?;
    if segments.is_empty() {
        return Err(Error::Argument(format!(
            "document {} has no segments",
            doc.doc_id
        )));
    }
    let n_segments = segments.len();
    let (w, stride) = match *segmentation {
        Segmentation::WordWindow { w, stride } => (Some(w), Some(stride)),
        _ => (None, None),
    };

    let mut n = if opts.exhaustive {
        1
    } else {
        opts.n_per_sample
    };
    if n == 0 {
        return Err(Error::Argument("n_per_sample must be at least 1".into()));
    }
    if n > n_segments {
        warn!(
            "{}: n_per_sample {} exceeds {} segments; clamped",
            doc.doc_id, n, n_segments
        );
        n = n_segments;
    }
    let draws: Vec<Vec<usize>> = if opts.exhaustive {
        (0..n_segments).map(|i| vec![i]).collect()
    } else {
        let num_samples = opts
            .num_samples
            .unwrap_or(DEFAULT_SAMPLES_PER_SEGMENT * n_segments);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        (0..num_samples)
            .map(|_| {
                let mut d = sample(&mut rng, n_segments, n).into_vec();
                d.sort_unstable();
                d
            })
            .collect()
    };
    let params = ExplanationParams {
        explainer: ExplainerKind::Sampled,
        m: opts.m,
        w,
        stride,
        n_per_sample: Some(n),
        num_samples: Some(draws.len()),
        seed: (!opts.exhaustive).then_some(opts.seed),
        exhaustive: opts.exhaustive,
        mean_normalized: opts.mean_normalized,
    };

    let base = scorer.score(&query.text, &doc.text)?;
    if base == 0.0 {
        return Ok(degenerate_set(
            query,
            doc,
            segmentation.granularity(),
            &segments,
            opts.m,
            params,
        ));
    }

    let masked: Vec<String> = draws
        .iter()
        .map(|d| mask_indices(doc, &segments, d))
        .collect();
    let scores = if masked.is_empty() {
        Vec::new()
    } else {
        scorer.score_texts(&query.text, &masked)?
    };

    let mut weights = vec![0.0; n_segments];
    let mut hits = vec![0usize; n_segments];
    let scale = n as f64 * base.abs();
    for (draw, s) in draws.iter().zip(&scores) {
        let credit = (base - s).abs() / scale;
        for &i in draw {
            weights[i] += credit;
            hits[i] += 1;
        }
    }
    if opts.mean_normalized {
        for (w, &h) in weights.iter_mut().zip(&hits) {
            if h > 0 {
                *w /= h as f64;
            }
        }
    }

    let rationales = select_top(&segments, &weights, opts.m)
        .into_iter()
        .map(|i| Rationale {
            segment: segments[i].clone(),
            weight: weights[i],
        })
        .collect();
    Ok(ExplanationSet {
        query_id: query.query_id.clone(),
        doc_id: doc.doc_id.clone(),
        granularity: segmentation.granularity(),
        rationales,
        params,
        base_score: base,
        degenerate: false,
        truncated: false,
        num_segments: n_segments,
    })
}

/// Greedy sentence explainer. Each step scores every remaining sentence's
/// signed relative drop `(θ(R) - θ(R - s)) / |θ(R)|` against the current
/// residual `R`, keeps the largest (ties: earliest sentence), and removes it.
///
/// Once the residual scores zero the drop is undefined; the remaining slots
/// are filled in document order with weight 0 and the set is marked truncated.
pub fn explain_greedy(
    query: &Query,
    doc: &Document,
    scorer: &DocumentScorer,
    m: usize,
) -> Result<ExplanationSet> {
    if m == 0 {
        return Err(Error::Argument("m must be at least 1".into()));
    }
    let sentences = scorer.splitter.split(&doc.doc_id, &doc.text);
    if sentences.is_empty() {
        return Err(Error::Argument(format!(
            "document {} has no sentences",
            doc.doc_id
        )));
    }
    let params = ExplanationParams {
        explainer: ExplainerKind::Greedy,
        m,
        w: None,
        stride: None,
        n_per_sample: None,
        num_samples: None,
        seed: None,
        exhaustive: false,
        mean_normalized: false,
    };
    let base = scorer.score(&query.text, &doc.text)?;
    if base == 0.0 {
        return Ok(degenerate_set(
            query,
            doc,
            Granularity::Sentence,
            &sentences,
            m,
            params,
        ));
    }

    let mut removed: Vec<usize> = Vec::new();
    let mut remaining: Vec<usize> = (0..sentences.len()).collect();
    let mut rationales = Vec::new();
    let mut residual_score = base;
    let mut truncated = false;
    while rationales.len() < m && !remaining.is_empty() {
        if residual_score == 0.0 {
            // Nothing left to explain: the rest of the picks carry zero weight.
            truncated = true;
            for &r in remaining.iter().take(m - rationales.len()) {
                rationales.push(Rationale {
                    segment: sentences[r].clone(),
                    weight: 0.0,
                });
            }
            break;
        }
        let candidates: Vec<String> = remaining
            .iter()
            .map(|&r| {
                let mut idx = removed.clone();
                idx.push(r);
                mask_indices(doc, &sentences, &idx)
            })
            .collect();
        let scores = scorer.score_texts(&query.text, &candidates)?;
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] < scores[best] {
                best = i;
            }
        }
        let chosen = remaining.remove(best);
        let weight = (residual_score - scores[best]) / residual_score.abs();
        rationales.push(Rationale {
            segment: sentences[chosen].clone(),
            weight,
        });
        removed.push(chosen);
        residual_score = scores[best];
    }
    Ok(ExplanationSet {
        query_id: query.query_id.clone(),
        doc_id: doc.doc_id.clone(),
        granularity: Granularity::Sentence,
        rationales,
        params,
        base_score: base,
        degenerate: false,
        truncated,
        num_segments: sentences.len(),
    })
}

/// The concatenation of a document's rationales, in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoDocument {
    pub doc_id: String,
    pub text: String,
}

pub fn build_pseudo_document(explanation: &ExplanationSet) -> Result<PseudoDocument> {
    if explanation.is_empty() {
        return Err(Error::Argument(format!(
            "explanation for {} has no rationales",
            explanation.doc_id
        )));
    }
    Ok(PseudoDocument {
        doc_id: explanation.doc_id.clone(),
        text: join_in_document_order(explanation.rationales.iter().map(|r| &r.segment)),
    })
}

pub const DEFAULT_COMBINATION_BUDGET: usize = 1024;

/// Relative scores of jointly masked span combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub base_score: f64,
    /// `(span indices, θ(Q, D - spans) / θ(Q, D))`, indices ascending,
    /// entries ordered by size then lexicographically.
    pub combinations: Vec<(Vec<usize>, f64)>,
    /// Per span: max over evaluated combinations containing it of `1 - s`.
    /// `None` when no evaluated combination contains the span.
    pub fidelity: Vec<Option<f64>>,
    /// The combination space exceeded the budget and was subsampled.
    pub sampled: bool,
}

impl Ablation {
    pub fn relative_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.combinations.iter().map(|(_, s)| *s)
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

fn all_combinations(n: usize, max_size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for size in 1..=max_size.min(n) {
        rec(0, n, size, &mut Vec::new(), &mut out);
    }
    out
}

/// Uniform sample of `budget` distinct combinations of size `1..=max_size`.
fn sample_combinations(n: usize, max_size: usize, budget: usize, seed: u64) -> Vec<Vec<usize>> {
    let sizes: Vec<(usize, f64)> = (1..=max_size.min(n))
        .map(|s| (s, binomial(n, s) as f64))
        .collect();
    let total: f64 = sizes.iter().map(|(_, c)| c).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(budget);
    while seen.len() < budget {
        let mut x = rng.gen::<f64>() * total;
        let mut size = sizes[sizes.len() - 1].0;
        for &(s, c) in &sizes {
            if x < c {
                size = s;
                break;
            }
            x -= c;
        }
        let mut combo = sample(&mut rng, n, size).into_vec();
        combo.sort_unstable();
        seen.insert(combo);
    }
    let mut out: Vec<Vec<usize>> = seen.into_iter().collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Jointly mask every combination of 1..=`m_max` spans (or a seeded uniform
/// subsample of `budget` of them) and record `θ(Q, D - c) / θ(Q, D)`.
pub fn ablate_combinations(
    query: &Query,
    doc: &Document,
    scorer: &DocumentScorer,
    spans: &[Segment],
    m_max: usize,
    budget: usize,
    seed: u64,
) -> Result<Ablation> {
    if m_max == 0 {
        return Err(Error::Argument("m_max must be at least 1".into()));
    }
    if budget == 0 {
        return Err(Error::Argument(
            "combination budget must be at least 1".into(),
        ));
    }
    let mut sorted: Vec<&Segment> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    if sorted.windows(2).any(|w| w[0].overlaps(w[1])) {
        return Err(Error::Argument(format!(
            "overlapping spans in {}",
            doc.doc_id
        )));
    }
    if let Some(s) = spans
        .iter()
        .find(|s| s.doc_id != doc.doc_id || doc.text.get(s.start..s.end) != Some(s.text.as_str()))
    {
        return Err(Error::Argument(format!(
            "span [{}, {}) does not belong to {}",
            s.start, s.end, doc.doc_id
        )));
    }
    let base = scorer.score(&query.text, &doc.text)?;
    if base == 0.0 {
        return Err(Error::DegenerateScore {
            doc_id: doc.doc_id.clone(),
        });
    }
    let n = spans.len();
    let max_size = m_max.min(n);
    let total: u128 = (1..=max_size)
        .map(|s| binomial(n, s))
        .fold(0u128, u128::saturating_add);
    let sampled = total > budget as u128;
    let combos = if sampled {
        sample_combinations(n, max_size, budget, seed)
    } else {
        all_combinations(n, max_size)
    };
    let masked: Vec<String> = combos.iter().map(|c| mask_indices(doc, spans, c)).collect();
    let scores = if masked.is_empty() {
        Vec::new()
    } else {
        scorer.score_texts(&query.text, &masked)?
    };
    let mut fidelity: Vec<Option<f64>> = vec![None; n];
    let combinations: Vec<(Vec<usize>, f64)> = combos
        .into_iter()
        .zip(scores)
        .map(|(c, s)| {
            let rel = s / base;
            for &j in &c {
                let f = 1.0 - rel;
                fidelity[j] = Some(fidelity[j].map_or(f, |old: f64| old.max(f)));
            }
            (c, rel)
        })
        .collect();
    Ok(Ablation {
        base_score: base,
        combinations,
        fidelity,
        sampled,
    })
}

/// Derive a per-document seed from a run seed so results do not depend on
/// the order in which documents are processed.
pub fn document_seed(run_seed: u64, query_id: &str, doc_id: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(query_id.as_bytes());
    h.update([0u8]);
    h.update(doc_id.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// One line of an explanation dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub query_id: String,
    pub doc_id: String,
    pub granularity: Granularity,
    pub params: ExplanationParams,
    pub rationales: Vec<RationaleRecord>,
    pub base_score: f64,
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub truncated: bool,
    pub num_segments: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub weight: f64,
}

impl From<&ExplanationSet> for ExplanationRecord {
    fn from(e: &ExplanationSet) -> Self {
        Self {
            query_id: e.query_id.clone(),
            doc_id: e.doc_id.clone(),
            granularity: e.granularity,
            params: e.params.clone(),
            rationales: e
                .rationales
                .iter()
                .map(|r| RationaleRecord {
                    index: r.segment.index,
                    start: r.segment.start,
                    end: r.segment.end,
                    text: r.segment.text.clone(),
                    weight: r.weight,
                })
                .collect(),
            base_score: e.base_score,
            degenerate: e.degenerate,
            truncated: e.truncated,
            num_segments: e.num_segments,
        }
    }
}

impl From<ExplanationRecord> for ExplanationSet {
    fn from(r: ExplanationRecord) -> Self {
        let granularity = r.granularity;
        let doc_id = r.doc_id.clone();
        Self {
            query_id: r.query_id,
            doc_id: r.doc_id,
            granularity,
            rationales: r
                .rationales
                .into_iter()
                .map(|x| Rationale {
                    segment: Segment {
                        doc_id: doc_id.clone(),
                        granularity,
                        index: x.index,
                        start: x.start,
                        end: x.end,
                        text: x.text,
                    },
                    weight: x.weight,
                })
                .collect(),
            params: r.params,
            base_score: r.base_score,
            degenerate: r.degenerate,
            truncated: r.truncated,
            num_segments: r.num_segments,
        }
    }
}

/// Explanations keyed by `(query_id, doc_id)`.
pub type ExplanationMap = BTreeMap<(String, String), ExplanationSet>;
