//! Kendall's tau-b, MRC and Pearson correlation.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus_io::RankedList;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    pub tau: f64,
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in either variable.
    pub tied_pairs: u64,
    /// Pairs tied in the first variable.
    pub tied_a: u64,
    /// Pairs tied in the second variable.
    pub tied_b: u64,
}

fn tie_pairs<T: PartialEq>(sorted: impl Iterator<Item = T>) -> u64 {
    let mut total = 0u64;
    let mut run = 0u64;
    let mut prev: Option<T> = None;
    for v in sorted {
        if prev.as_ref() == Some(&v) {
            run += 1;
        } else {
            total += run * (run + 1) / 2;
            run = 0;
        }
        prev = Some(v);
    }
    total + run * (run + 1) / 2
}

/// Merge sort `ys` ascending, returning the number of strict inversions.
fn sort_counting_swaps(ys: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = ys.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = ys.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        sort_counting_swaps(l, bl) + sort_counting_swaps(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if ys[j] < ys[i] {
            buf[k] = ys[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = ys[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + (mid - i)].copy_from_slice(&ys[i..mid]);
    k += mid - i;
    buf[k..k + (n - j)].copy_from_slice(&ys[j..n]);
    ys.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall's tau-b between paired observations `a[i]`, `b[i]` (Knight's
/// O(n log n) algorithm). Ties are counted separately per variable.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> Result<TauResult> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "kendall_tau needs paired samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "{n} item(s); need at least 2"
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Argument("kendall_tau input contains NaN".into()));
    }
    let mut pairs: Vec<(f64, f64)> = a.iter().copied().zip(b.iter().copied()).collect();
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let tied_a = tie_pairs(pairs.iter().map(|p| p.0));
    let tied_both = tie_pairs(pairs.iter().copied());
    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let discordant = sort_counting_swaps(&mut ys, &mut buf);
    let tied_b = tie_pairs(ys.iter().copied());

    let tied_pairs = tied_a + tied_b - tied_both;
    let concordant = n0 - tied_pairs - discordant;
    let denom = ((n0 - tied_a) as f64 * (n0 - tied_b) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one side is entirely tied".into(),
        ));
    }
    let tau = (concordant as f64 - discordant as f64) / denom;
    Ok(TauResult {
        tau: tau.clamp(-1.0, 1.0),
        concordant,
        discordant,
        tied_pairs,
        tied_a,
        tied_b,
    })
}

/// Kendall's tau between two strict orderings (best first) of the same items.
pub fn kendall_tau_orderings<T: Eq + std::hash::Hash + std::fmt::Debug>(
    order_a: &[T],
    order_b: &[T],
) -> Result<TauResult> {
    if order_a.len() != order_b.len() {
        return Err(Error::Argument(
            "orderings cover different numbers of items".into(),
        ));
    }
    let pos_b: HashMap<&T, usize> = order_b.iter().enumerate().map(|(i, x)| (x, i)).collect();
    if pos_b.len() != order_b.len() {
        return Err(Error::Argument("ordering contains duplicate items".into()));
    }
    let mut a_rank = Vec::with_capacity(order_a.len());
    let mut b_rank = Vec::with_capacity(order_a.len());
    let mut seen = HashSet::new();
    for (i, item) in order_a.iter().enumerate() {
        let Some(&j) = pos_b.get(item) else {
            return Err(Error::Argument(format!(
                "item {item:?} missing from second ordering"
            )));
        };
        if !seen.insert(item) {
            return Err(Error::Argument("ordering contains duplicate items".into()));
        }
        // Higher value = better, so negate positions.
        a_rank.push(-(i as f64));
        b_rank.push(-(j as f64));
    }
    kendall_tau(&a_rank, &b_rank)
}

/// Pseudo-document outcome for one retrieved document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Rescore {
    Score(f64),
    /// θ(Q, D) was zero; the document is left out of the correlation.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTau {
    pub query_id: String,
    /// `None` when fewer than two documents could be rescored.
    pub tau: Option<f64>,
    pub included_docs: usize,
    pub degenerate_docs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrcResult {
    /// Mean per-query tau over queries with at least two rescored documents.
    pub mrc: Option<f64>,
    pub per_query: Vec<QueryTau>,
    pub excluded_queries: Vec<String>,
}

/// Correlation between a query's original top-k order and the order obtained
/// by rescoring the same documents through their pseudo-documents (ties broken
/// by ascending doc id).
pub fn query_tau(list: &RankedList, rescored: &BTreeMap<String, Rescore>) -> Result<QueryTau> {
    let mut included: Vec<(&str, f64)> = Vec::with_capacity(list.len());
    let mut degenerate = Vec::new();
    for doc_id in list.doc_ids() {
        match rescored.get(doc_id) {
            Some(Rescore::Score(s)) => included.push((doc_id, *s)),
            Some(Rescore::Degenerate) => degenerate.push(doc_id.to_string()),
            None => {
                return Err(Error::Integrity(format!(
                    "query {}: no pseudo-document score or degenerate flag for {doc_id}",
                    list.query_id
                )))
            }
        }
    }
    let tau = if included.len() < 2 {
        None
    } else {
        let original: Vec<&str> = included.iter().map(|(d, _)| *d).collect();
        let mut reranked = included.clone();
        reranked.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(y.0)));
        let reranked: Vec<&str> = reranked.into_iter().map(|(d, _)| d).collect();
        Some(kendall_tau_orderings(&original, &reranked)?.tau)
    };
    Ok(QueryTau {
        query_id: list.query_id.clone(),
        tau,
        included_docs: included.len(),
        degenerate_docs: degenerate,
    })
}

/// Mean rank correlation over queries. `rescored` maps each query id to its
/// per-document outcomes.
pub fn mrc(
    lists: &[RankedList],
    rescored: &BTreeMap<String, BTreeMap<String, Rescore>>,
) -> Result<MrcResult> {
    let empty = BTreeMap::new();
    let mut per_query = Vec::with_capacity(lists.len());
    let mut excluded = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for list in lists {
        let qt = query_tau(list, rescored.get(&list.query_id).unwrap_or(&empty))?;
        match qt.tau {
            Some(t) => {
                sum += t;
                count += 1;
            }
            None => excluded.push(list.query_id.clone()),
        }
        per_query.push(qt);
    }
    Ok(MrcResult {
        mrc: (count > 0).then(|| sum / count as f64),
        per_query,
        excluded_queries: excluded,
    })
}

/// Pearson correlation; `None` if fewer than two points or either side is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_and_reversal() {
        let items = ["a", "b", "c", "d", "e"];
        assert_eq!(kendall_tau_orderings(&items, &items).unwrap().tau, 1.0);
        let rev: Vec<&str> = items[..4].iter().rev().copied().collect();
        assert_eq!(kendall_tau_orderings(&items[..4], &rev).unwrap().tau, -1.0);
    }

    #[test]
    fn one_adjacent_swap() {
        let r = kendall_tau_orderings(&["a", "b", "c"], &["b", "a", "c"]).unwrap();
        assert_eq!((r.concordant, r.discordant), (2, 1));
        assert!((r.tau - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            kendall_tau_orderings(&["a", "b"], &["a", "c"]),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            kendall_tau_orderings(&["a"], &["a"]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            kendall_tau(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn tau_b_with_ties() {
        // scipy.stats.kendalltau([1,2,2,3],[1,3,2,2]) = 0.4
        let r = kendall_tau(&[1.0, 2.0, 2.0, 3.0], &[1.0, 3.0, 2.0, 2.0]).unwrap();
        assert!((r.tau - 0.4).abs() < 1e-12, "{}", r.tau);
        assert_eq!(r.tied_a, 1);
        assert_eq!(r.tied_b, 1);
    }

    fn list(q: &str, ids: &[&str]) -> RankedList {
        let n = ids.len();
        RankedList::from_scores(
            q,
            ids.iter()
                .enumerate()
                .map(|(i, d)| (d.to_string(), (n - i) as f64))
                .collect(),
            n,
        )
    }

    fn rescores(pairs: &[(&str, f64)]) -> BTreeMap<String, Rescore> {
        pairs
            .iter()
            .map(|(d, s)| (d.to_string(), Rescore::Score(*s)))
            .collect()
    }

    #[test]
    fn mrc_identity_negation_and_mean() {
        let l1 = list("q1", &["a", "b", "c"]);
        let same: BTreeMap<_, _> = [(
            "q1".to_string(),
            rescores(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]),
        )]
        .into();
        assert_eq!(
            mrc(std::slice::from_ref(&l1), &same).unwrap().mrc,
            Some(1.0)
        );

        let neg: BTreeMap<_, _> = [(
            "q1".to_string(),
            rescores(&[("a", -3.0), ("b", -2.0), ("c", -1.0)]),
        )]
        .into();
        assert_eq!(
            mrc(std::slice::from_ref(&l1), &neg).unwrap().per_query[0].tau,
            Some(-1.0)
        );

        let l2 = list("q2", &["x", "y", "z"]);
        let both: BTreeMap<_, _> = [
            (
                "q1".to_string(),
                rescores(&[("a", 3.0), ("b", 2.0), ("c", 1.0)]),
            ),
            (
                "q2".to_string(),
                rescores(&[("x", 2.0), ("y", 3.0), ("z", 1.0)]),
            ),
        ]
        .into();
        let r = mrc(&[l1, l2], &both).unwrap();
        assert!((r.mrc.unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mrc_ties_use_doc_id() {
        // all pseudo scores equal: rerank is alphabetical
        let l = list("q", &["c", "a", "b"]);
        let r: BTreeMap<_, _> = [(
            "q".to_string(),
            rescores(&[("a", 1.0), ("b", 1.0), ("c", 1.0)]),
        )]
        .into();
        let t = mrc(&[l], &r).unwrap().per_query[0].tau.unwrap();
        let expected = kendall_tau_orderings(&["c", "a", "b"], &["a", "b", "c"])
            .unwrap()
            .tau;
        assert_eq!(t, expected);
    }

    #[test]
    fn mrc_degenerate_and_exclusion() {
        let l = list("q", &["a", "b", "c"]);
        let mut r = rescores(&[("a", 3.0), ("b", 1.0)]);
        r.insert("c".into(), Rescore::Degenerate);
        let res = mrc(std::slice::from_ref(&l), &[("q".to_string(), r)].into()).unwrap();
        assert_eq!(res.per_query[0].degenerate_docs, ["c"]);
        assert_eq!(res.per_query[0].tau, Some(1.0));

        let mut r = rescores(&[("a", 3.0)]);
        r.insert("b".into(), Rescore::Degenerate);
        r.insert("c".into(), Rescore::Degenerate);
        let res = mrc(std::slice::from_ref(&l), &[("q".to_string(), r)].into()).unwrap();
        assert_eq!(res.mrc, None);
        assert_eq!(res.excluded_queries, ["q"]);

        let missing = mrc(&[l], &[("q".to_string(), rescores(&[("a", 1.0)]))].into());
        assert!(matches!(missing, Err(Error::Integrity(_))));
    }

    #[test]
    fn pearson_basic() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 1.0], &[2.0, 3.0]), None);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(v in proptest::collection::vec((0i32..5, 0i32..5), 2..30)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            match (kendall_tau(&a, &b), kendall_tau(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x.tau, y.tau);
                    prop_assert!((-1.0..=1.0).contains(&x.tau));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric definedness"),
            }
        }

        #[test]
        fn invariant_under_increasing_transform(v in proptest::collection::vec((-50i32..50, -50i32..50), 2..30)) {
            let a: Vec<f64> = v.iter().map(|p| p.0 as f64).collect();
            let b: Vec<f64> = v.iter().map(|p| p.1 as f64).collect();
            let b2: Vec<f64> = b.iter().map(|x| (x / 10.0).exp() * 3.0 + 1.0).collect();
            if let (Ok(x), Ok(y)) = (kendall_tau(&a, &b), kendall_tau(&a, &b2)) {
                prop_assert_eq!(x.tau, y.tau);
            }
        }
    }
}
