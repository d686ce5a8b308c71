//! Consistency pooling: per-document means of masked relative scores, then a
//! mean over documents.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyPool {
    /// `C_i` for every document that had at least one masked score, in input order.
    pub per_doc: Vec<(String, f64)>,
    /// Mean of `per_doc`; `None` when every document was excluded.
    pub s_c: Option<f64>,
    /// Documents with no masked scores.
    pub excluded: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn consistency_pool<'a, I>(masked: I) -> ConsistencyPool
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    let mut per_doc = Vec::new();
    let mut excluded = Vec::new();
    for (doc, scores) in masked {
        if scores.is_empty() {
            excluded.push(doc.to_string());
        } else {
            per_doc.push((doc.to_string(), mean(scores)));
        }
    }
    let s_c = if per_doc.is_empty() {
        None
    } else {
        Some(per_doc.iter().map(|(_, c)| c).sum::<f64>() / per_doc.len() as f64)
    };
    ConsistencyPool {
        per_doc,
        s_c,
        excluded,
    }
}
