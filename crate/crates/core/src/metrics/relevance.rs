//! nDCG@k with exponential gain.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus_io::RankedList;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdcgResult {
    pub value: f64,
    /// Set when the qrels hold no positively graded document for the query;
    /// `value` is then 0 by definition.
    pub no_relevant: bool,
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// nDCG@k of `list` against `grades`. The ideal DCG uses every judged
/// document for the query, not just the retrieved ones.
pub fn ndcg_at_k(
    list: &RankedList,
    grades: Option<&BTreeMap<String, u32>>,
    k: usize,
) -> Result<NdcgResult> {
    if k == 0 {
        return Err(Error::Argument("nDCG cutoff k must be >= 1".into()));
    }
    let empty = BTreeMap::new();
    let grades = grades.unwrap_or(&empty);
    let mut ideal: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    if ideal.is_empty() {
        return Ok(NdcgResult {
            value: 0.0,
            no_relevant: true,
        });
    }
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) * discount(i + 1))
        .sum();
    let dcg: f64 = list
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain(grades.get(d).copied().unwrap_or(0)) * discount(i + 1))
        .sum();
    Ok(NdcgResult {
        value: dcg / idcg,
        no_relevant: false,
    })
}
