//! Okapi BM25 over an in-memory inverted index, with a versioned on-disk format.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Scorer, ScorerKind};
use crate::corpus_io::{Corpus, RankedList};
use crate::error::{Error, Result};
use crate::segmentation::token_texts;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 > 0.0 && k1.is_finite()) {
            return Err(Error::Argument(format!(
                "BM25 k1 must be positive, got {k1}"
            )));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Argument(format!(
                "BM25 b must lie in [0, 1], got {b}"
            )));
        }
        Ok(Self { k1, b })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    /// Position of the document in [`InvertedIndex::doc_ids`].
    pub doc: u32,
    pub tf: u32,
}

/// Term postings plus per-document lengths. Documents are numbered in
/// ascending doc-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    total_length: u64,
}

pub fn build_index(corpus: &Corpus) -> InvertedIndex {
    let mut doc_ids = Vec::with_capacity(corpus.len());
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
    let mut total_length = 0u64;
    for (i, doc) in corpus.iter().enumerate() {
        let tokens = token_texts(&doc.text);
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push(Posting {
                doc: i as u32,
                tf: count,
            });
        }
        doc_ids.push(doc.doc_id.clone());
        doc_lengths.push(tokens.len() as u32);
        total_length += tokens.len() as u64;
    }
    InvertedIndex {
        doc_ids,
        doc_lengths,
        postings,
        total_length,
    }
}

impl InvertedIndex {
    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        if self.doc_ids.is_empty() {
            0.0
        } else {
            self.total_length as f64 / self.doc_ids.len() as f64
        }
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, doc: usize) -> u32 {
        self.doc_lengths[doc]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings
            .iter()
            .map(|(t, p)| (t.as_str(), p.as_slice()))
    }
}

/// `ln((N - df + 0.5) / (df + 0.5) + 1)`, never negative.
pub fn idf(num_docs: usize, df: usize) -> f64 {
    let n = num_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Distinct query terms in order of first appearance.
fn query_terms(query: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    token_texts(query)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

#[inline]
fn term_weight(idf: f64, tf: f64, length_ratio: f64, params: &Bm25Params) -> f64 {
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * length_ratio))
}

fn length_ratio(dl: f64, avgdl: f64) -> f64 {
    if avgdl > 0.0 {
        dl / avgdl
    } else {
        1.0
    }
}

/// BM25 of an arbitrary text against the collection statistics in `index`.
///
/// Term frequencies and the length |D| come from `doc_text`; document
/// frequencies and avgdl come from the index. Each distinct query term
/// contributes once.
pub fn bm25_score(
    index: &InvertedIndex,
    params: &Bm25Params,
    query: &str,
    doc_text: &str,
) -> Result<f64> {
    if index.num_docs() == 0 {
        return Err(Error::State("cannot score against an empty index".into()));
    }
    let tokens = token_texts(doc_text);
    let mut tf: HashMap<&str, u32> = HashMap::new();
    for t in &tokens {
        *tf.entry(t.as_str()).or_default() += 1;
    }
    let ratio = length_ratio(tokens.len() as f64, index.avgdl());
    let mut score = 0.0;
    for term in query_terms(query) {
        if let Some(&count) = tf.get(term.as_str()) {
            score += term_weight(
                idf(index.num_docs(), index.df(&term)),
                count as f64,
                ratio,
                params,
            );
        }
    }
    Ok(score)
}

/// Top-`k` documents by BM25, ties broken by ascending doc id. Only documents
/// sharing at least one term with the query are returned.
pub fn retrieve_topk(
    index: &InvertedIndex,
    params: &Bm25Params,
    query_id: &str,
    query: &str,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if index.num_docs() == 0 {
        return Ok(RankedList::from_scores(query_id, Vec::new(), k));
    }
    let avgdl = index.avgdl();
    let mut acc: HashMap<u32, f64> = HashMap::new();
    for term in query_terms(query) {
        let postings = index.postings(&term);
        if postings.is_empty() {
            continue;
        }
        let w = idf(index.num_docs(), postings.len());
        for p in postings {
            let ratio = length_ratio(index.doc_lengths[p.doc as usize] as f64, avgdl);
            *acc.entry(p.doc).or_insert(0.0) += term_weight(w, p.tf as f64, ratio, params);
        }
    }
    let scored = acc
        .into_iter()
        .map(|(doc, s)| (index.doc_ids[doc as usize].clone(), s))
        .collect();
    Ok(RankedList::from_scores(query_id, scored, k))
}

/// BM25 as a [`Scorer`]: scores texts against a fixed index.
#[derive(Debug, Clone)]
pub struct Bm25Scorer {
    index: Arc<InvertedIndex>,
    params: Bm25Params,
}

impl Bm25Scorer {
    pub fn new(index: Arc<InvertedIndex>, params: Bm25Params) -> Result<Self> {
        if index.num_docs() == 0 {
            return Err(Error::State("BM25 scorer needs a non-empty index".into()));
        }
        Ok(Self { index, params })
    }

    pub fn index(&self) -> &Arc<InvertedIndex> {
        &self.index
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }
}

impl Scorer for Bm25Scorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::Bm25
    }

    fn fingerprint(&self) -> String {
        format!(
            "bm25:k1={}:b={}:n={}:len={}:terms={}",
            self.params.k1,
            self.params.b,
            self.index.num_docs(),
            self.index.total_length,
            self.index.num_terms()
        )
    }

    fn score_texts(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>> {
        texts
            .iter()
            .map(|t| bm25_score(&self.index, &self.params, query, t))
            .collect()
    }
}

const INDEX_MAGIC: &[u8; 8] = b"XRANKIDX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn encode_payload(index: &InvertedIndex) -> Vec<u8> {
    let mut buf = Vec::new();
    put_u32(&mut buf, index.doc_ids.len() as u32);
    for (id, len) in index.doc_ids.iter().zip(&index.doc_lengths) {
        put_str(&mut buf, id);
        put_u32(&mut buf, *len);
    }
    put_u32(&mut buf, index.postings.len() as u32);
    for (term, postings) in &index.postings {
        put_str(&mut buf, term);
        put_u32(&mut buf, postings.len() as u32);
        for p in postings {
            put_u32(&mut buf, p.doc);
            put_u32(&mut buf, p.tf);
        }
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::IndexFormat("truncated index payload".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::IndexFormat("invalid UTF-8 in index".into()))
    }
}

fn decode_payload(buf: &[u8]) -> Result<InvertedIndex> {
    let mut cur = Cursor { buf, pos: 0 };
    let n_docs = cur.u32()? as usize;
    let mut doc_ids = Vec::with_capacity(n_docs.min(buf.len()));
    let mut doc_lengths = Vec::with_capacity(n_docs.min(buf.len()));
    let mut total_length = 0u64;
    for _ in 0..n_docs {
        doc_ids.push(cur.string()?);
        let len = cur.u32()?;
        total_length += len as u64;
        doc_lengths.push(len);
    }
    let n_terms = cur.u32()? as usize;
    let mut postings = BTreeMap::new();
    for _ in 0..n_terms {
        let term = cur.string()?;
        let n = cur.u32()? as usize;
        let mut list = Vec::with_capacity(n.min(buf.len()));
        for _ in 0..n {
            let doc = cur.u32()?;
            let tf = cur.u32()?;
            if doc as usize >= n_docs {
                return Err(Error::IndexFormat(format!(
                    "posting for unknown document {doc}"
                )));
            }
            list.push(Posting { doc, tf });
        }
        postings.insert(term, list);
    }
    if cur.pos != buf.len() {
        return Err(Error::IndexFormat(
            "trailing bytes after index payload".into(),
        ));
    }
    Ok(InvertedIndex {
        doc_ids,
        doc_lengths,
        postings,
        total_length,
    })
}

/// Serialise: magic, format version, payload length, payload, SHA-256 of payload.
pub fn index_to_bytes(index: &InvertedIndex) -> Vec<u8> {
    let payload = encode_payload(index);
    let mut out = Vec::with_capacity(payload.len() + 52);
    out.extend_from_slice(INDEX_MAGIC);
    put_u32(&mut out, INDEX_FORMAT_VERSION);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    out
}

pub fn index_from_bytes(bytes: &[u8]) -> Result<InvertedIndex> {
    if bytes.len() < 20 || &bytes[..8] != INDEX_MAGIC {
        return Err(Error::IndexFormat("not an xrank index file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != INDEX_FORMAT_VERSION {
        return Err(Error::IndexFormat(format!(
            "index format version {version} is not supported (expected {INDEX_FORMAT_VERSION})"
        )));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let rest = &bytes[20..];
    if rest.len() != len.saturating_add(32) {
        return Err(Error::IndexFormat(
            "index length mismatch; file truncated or corrupted".into(),
        ));
    }
    let (payload, checksum) = rest.split_at(len);
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(Error::IndexFormat("index checksum mismatch".into()));
    }
    decode_payload(payload)
}

pub fn write_index(index: &InvertedIndex, path: &Path) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&index_to_bytes(index))
        .map_err(|e| Error::io(path, e))
}

pub fn read_index(path: &Path) -> Result<InvertedIndex> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    index_from_bytes(&bytes)
}
