//! Loading and persisting corpora, topics, relevance judgments, run files and
//! evaluation reports.
//!
//! Loaders are single-pass and produce immutable stores. Everything downstream
//! consumes only these types; no metric reads a file on its own.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::EvalReport;

/// A retrievable unit of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            doc_id: doc_id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            text: text.into(),
        }
    }
}

/// Documents keyed by id. Iteration is in ascending id order, so two corpora
/// loaded from permuted inputs compare equal.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: BTreeMap<String, Document>,
}

impl Corpus {
    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Result<Self> {
        let mut corpus = Corpus::default();
        for doc in docs {
            corpus.insert(doc)?;
        }
        Ok(corpus)
    }

    fn insert(&mut self, doc: Document) -> Result<()> {
        if doc.doc_id.is_empty() {
            return Err(Error::Integrity("empty document id".into()));
        }
        if self.docs.contains_key(&doc.doc_id) {
            return Err(Error::Integrity(format!(
                "duplicate document id {:?}",
                doc.doc_id
            )));
        }
        self.docs.insert(doc.doc_id.clone(), doc);
        Ok(())
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.docs.get(doc_id)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.docs.contains_key(doc_id)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.docs.values()
    }
}

/// On-disk layout of a corpus or topic file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextFormat {
    /// One JSON object per line with `id` and `text` keys.
    Jsonl,
    /// Two tab-separated columns: id, text.
    Tsv,
}

impl TextFormat {
    /// Guess the format from a file extension, defaulting to jsonl.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => TextFormat::Tsv,
            _ => TextFormat::Jsonl,
        }
    }
}

impl FromStr for TextFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(TextFormat::Jsonl),
            "tsv" => Ok(TextFormat::Tsv),
            other => Err(Error::Argument(format!("unknown text format {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct IdTextRecord {
    id: String,
    text: String,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn source_name(path: &Path) -> String {
    path.display().to_string()
}

/// Iterate `(line_number, line)` pairs, skipping blank lines. Line numbers are 1-based.
fn numbered_lines<'a, R: BufRead + 'a>(
    reader: R,
    source: &'a str,
) -> impl Iterator<Item = Result<(usize, String)>> + 'a {
    reader
        .lines()
        .enumerate()
        .map(move |(i, line)| {
            line.map(|l| (i + 1, l))
                .map_err(|e| Error::parse(source, i + 1, e.to_string()))
        })
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

fn parse_id_text_records<R: BufRead>(
    reader: R,
    format: TextFormat,
    source: &str,
) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for item in numbered_lines(reader, source) {
        let (line_no, line) = item?;
        let (id, text) = match format {
            TextFormat::Jsonl => {
                let rec: IdTextRecord = serde_json::from_str(&line)
                    .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
                (rec.id, rec.text)
            }
            TextFormat::Tsv => {
                let line = line.trim_end_matches(['\r', '\n']);
                let (id, text) = line.split_once('\t').ok_or_else(|| {
                    Error::parse(source, line_no, "expected two tab-separated columns")
                })?;
                (id.to_string(), text.to_string())
            }
        };
        out.push((line_no, id, text));
    }
    Ok(out)
}

pub fn parse_corpus<R: BufRead>(reader: R, format: TextFormat, source: &str) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (line_no, id, text) in parse_id_text_records(reader, format, source)? {
        corpus
            .insert(Document::new(id, text))
            .map_err(|e| match e {
                Error::Integrity(msg) => {
                    Error::Integrity(format!("{source} line {line_no}: {msg}"))
                }
                other => other,
            })?;
    }
    Ok(corpus)
}

pub fn load_corpus(path: &Path, format: TextFormat) -> Result<Corpus> {
    parse_corpus(open(path)?, format, &source_name(path))
}

/// Parse a topic file. Queries come back sorted by id.
pub fn parse_queries<R: BufRead>(
    reader: R,
    format: TextFormat,
    source: &str,
) -> Result<Vec<Query>> {
    let mut queries: BTreeMap<String, Query> = BTreeMap::new();
    for (line_no, id, text) in parse_id_text_records(reader, format, source)? {
        if id.is_empty() {
            return Err(Error::Integrity(format!(
                "{source} line {line_no}: empty query id"
            )));
        }
        if text.trim().is_empty() {
            return Err(Error::Integrity(format!(
                "{source} line {line_no}: query {id:?} has empty text"
            )));
        }
        if queries.contains_key(&id) {
            return Err(Error::Integrity(format!(
                "{source} line {line_no}: duplicate query id {id:?}"
            )));
        }
        queries.insert(id.clone(), Query::new(id, text));
    }
    Ok(queries.into_values().collect())
}

pub fn load_queries(path: &Path, format: TextFormat) -> Result<Vec<Query>> {
    parse_queries(open(path)?, format, &source_name(path))
}

/// Graded document judgments plus optional sub-document relevance and human
/// span annotations, all keyed by `(query_id, doc_id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelevanceStore {
    doc_grades: BTreeMap<String, BTreeMap<String, u32>>,
    relevant_passages: BTreeMap<(String, String), Vec<String>>,
    human_spans: BTreeMap<(String, String), Vec<String>>,
    has_subdoc: bool,
    has_human_spans: bool,
    /// Grade at or above which a document counts as relevant.
    pub relevance_threshold: u32,
    /// Largest admissible grade, if declared.
    pub max_grade: Option<u32>,
}

impl Default for RelevanceStore {
    fn default() -> Self {
        Self {
            doc_grades: BTreeMap::new(),
            relevant_passages: BTreeMap::new(),
            human_spans: BTreeMap::new(),
            has_subdoc: false,
            has_human_spans: false,
            relevance_threshold: 1,
            max_grade: None,
        }
    }
}

impl RelevanceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_max_grade(mut self, max_grade: u32) -> Self {
        self.max_grade = Some(max_grade);
        self
    }

    /// Set a document grade. Returns the previous grade, if any.
    pub fn set_grade(&mut self, query_id: &str, doc_id: &str, grade: u32) -> Result<Option<u32>> {
        if let Some(max) = self.max_grade {
            if grade > max {
                return Err(Error::Integrity(format!(
                    "grade {grade} for ({query_id}, {doc_id}) exceeds declared max grade {max}"
                )));
            }
        }
        Ok(self
            .doc_grades
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade))
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.doc_grades
            .get(query_id)
            .and_then(|m| m.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    /// All judged grades for a query, keyed by doc id.
    pub fn grades_for(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.doc_grades.get(query_id)
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.grade(query_id, doc_id) >= self.relevance_threshold.max(1)
    }

    pub fn has_grades(&self) -> bool {
        !self.doc_grades.is_empty()
    }

    pub fn set_relevant_passages(&mut self, query_id: &str, doc_id: &str, passages: Vec<String>) {
        self.has_subdoc = true;
        self.relevant_passages
            .insert((query_id.to_string(), doc_id.to_string()), passages);
    }

    /// R(D) for a document. Empty when the document has no sub-document relevance.
    pub fn relevant_passages(&self, query_id: &str, doc_id: &str) -> &[String] {
        self.relevant_passages
            .get(&(query_id.to_string(), doc_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Whether any sub-document relevance data has been loaded.
    pub fn has_subdoc(&self) -> bool {
        self.has_subdoc
    }

    pub fn set_human_spans(&mut self, query_id: &str, doc_id: &str, spans: Vec<String>) {
        self.has_human_spans = true;
        self.human_spans
            .insert((query_id.to_string(), doc_id.to_string()), spans);
    }

    pub fn human_spans(&self, query_id: &str, doc_id: &str) -> &[String] {
        self.human_spans
            .get(&(query_id.to_string(), doc_id.to_string()))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn has_human_spans(&self) -> bool {
        self.has_human_spans
    }
}

/// Parse 4-column qrels (`qid iter docid grade`) into `store`. Repeated
/// `(qid, docid)` pairs keep the last grade. Returns the number of repeats.
pub fn parse_qrels_into<R: BufRead>(
    reader: R,
    source: &str,
    store: &mut RelevanceStore,
) -> Result<usize> {
    let mut repeats = 0;
    for item in numbered_lines(reader, source) {
        let (line_no, line) = item?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: i64 = cols[3].parse().map_err(|_| {
            Error::parse(source, line_no, format!("non-integer grade {:?}", cols[3]))
        })?;
        let grade = u32::try_from(grade)
            .map_err(|_| Error::parse(source, line_no, format!("negative grade {grade}")))?;
        if let Some(prev) = store.set_grade(cols[0], cols[2], grade)? {
            warn!(
                "{source} line {line_no}: repeated judgment for ({}, {}); grade {prev} replaced by {grade}",
                cols[0], cols[2]
            );
            repeats += 1;
        }
    }
    Ok(repeats)
}

pub fn load_qrels(path: &Path) -> Result<RelevanceStore> {
    let mut store = RelevanceStore::new();
    parse_qrels_into(open(path)?, &source_name(path), &mut store)?;
    Ok(store)
}

#[derive(Deserialize)]
struct PassageRecord {
    query_id: String,
    doc_id: String,
    passages: Vec<String>,
}

#[derive(Deserialize)]
struct SpanRecord {
    query_id: String,
    doc_id: String,
    spans: Vec<String>,
}

fn warn_unknown_doc(corpus: Option<&Corpus>, source: &str, line_no: usize, doc_id: &str) {
    if let Some(c) = corpus {
        if !c.contains(doc_id) {
            warn!("{source} line {line_no}: document {doc_id:?} not in corpus; record kept");
        }
    }
}

/// Parse sub-document relevance records (`query_id`, `doc_id`, `passages`).
/// Records for documents missing from `corpus` are kept with a warning.
pub fn parse_subdoc_relevance_into<R: BufRead>(
    reader: R,
    source: &str,
    corpus: Option<&Corpus>,
    store: &mut RelevanceStore,
) -> Result<()> {
    store.has_subdoc = true;
    for item in numbered_lines(reader, source) {
        let (line_no, line) = item?;
        let rec: PassageRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        warn_unknown_doc(corpus, source, line_no, &rec.doc_id);
        store.set_relevant_passages(&rec.query_id, &rec.doc_id, rec.passages);
    }
    Ok(())
}

pub fn load_subdoc_relevance(
    path: &Path,
    corpus: Option<&Corpus>,
    store: &mut RelevanceStore,
) -> Result<()> {
    parse_subdoc_relevance_into(open(path)?, &source_name(path), corpus, store)
}

/// Parse human span annotations (`query_id`, `doc_id`, `spans`).
pub fn parse_human_spans_into<R: BufRead>(
    reader: R,
    source: &str,
    corpus: Option<&Corpus>,
    store: &mut RelevanceStore,
) -> Result<()> {
    store.has_human_spans = true;
    for item in numbered_lines(reader, source) {
        let (line_no, line) = item?;
        let rec: SpanRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(source, line_no, e.to_string()))?;
        warn_unknown_doc(corpus, source, line_no, &rec.doc_id);
        store.set_human_spans(&rec.query_id, &rec.doc_id, rec.spans);
    }
    Ok(())
}

pub fn load_human_spans(
    path: &Path,
    corpus: Option<&Corpus>,
    store: &mut RelevanceStore,
) -> Result<()> {
    parse_human_spans_into(open(path)?, &source_name(path), corpus, store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
    pub rank: usize,
}

/// A scored top-k list for one query. Ranks are `1..=len`, scores are
/// non-increasing and doc ids are distinct.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    /// Sort `(doc_id, score)` pairs by descending score, ties by ascending
    /// doc id, keep at most `k`, and assign ranks.
    pub fn from_scores(
        query_id: impl Into<String>,
        mut scored: Vec<(String, f64)>,
        k: usize,
    ) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        let entries = scored
            .into_iter()
            .enumerate()
            .map(|(i, (doc_id, score))| RankedEntry {
                doc_id,
                score,
                rank: i + 1,
            })
            .collect();
        Self {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(Error::Integrity(format!(
                    "query {}: ranks not consecutive (position {} has rank {})",
                    self.query_id,
                    i + 1,
                    e.rank
                )));
            }
            if !seen.insert(e.doc_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "query {}: document {} appears twice",
                    self.query_id, e.doc_id
                )));
            }
            if i > 0 && e.score > self.entries[i - 1].score {
                return Err(Error::Integrity(format!(
                    "query {}: score increases at rank {}",
                    self.query_id, e.rank
                )));
            }
        }
        Ok(())
    }
}

/// Parse a 6-column run file. Lists come back sorted by query id, entries by rank.
pub fn parse_run<R: BufRead>(reader: R, source: &str) -> Result<Vec<RankedList>> {
    let mut by_query: BTreeMap<String, Vec<RankedEntry>> = BTreeMap::new();
    for item in numbered_lines(reader, source) {
        let (line_no, line) = item?;
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(Error::parse(
                source,
                line_no,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        let rank: usize = cols[3].parse().map_err(|_| {
            Error::parse(
                source,
                line_no,
                format!("rank {:?} is not a positive integer", cols[3]),
            )
        })?;
        let score: f64 = cols[4].parse().map_err(|_| {
            Error::parse(
                source,
                line_no,
                format!("score {:?} is not a number", cols[4]),
            )
        })?;
        if !score.is_finite() {
            return Err(Error::parse(source, line_no, "score is not finite"));
        }
        by_query
            .entry(cols[0].to_string())
            .or_default()
            .push(RankedEntry {
                doc_id: cols[2].to_string(),
                score,
                rank,
            });
    }
    by_query
        .into_iter()
        .map(|(query_id, mut entries)| {
            entries.sort_by_key(|e| e.rank);
            let list = RankedList { query_id, entries };
            list.validate()?;
            Ok(list)
        })
        .collect()
}

pub fn read_run(path: &Path) -> Result<Vec<RankedList>> {
    parse_run(open(path)?, &source_name(path))
}

/// Emit run lines in rank order with six-decimal scores.
pub fn format_run<W: Write>(lists: &[RankedList], tag: &str, mut out: W) -> std::io::Result<()> {
    for list in lists {
        let mut entries: Vec<&RankedEntry> = list.entries.iter().collect();
        entries.sort_by_key(|e| e.rank);
        for e in entries {
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                list.query_id, e.doc_id, e.rank, e.score, tag
            )?;
        }
    }
    Ok(())
}

pub fn write_run(lists: &[RankedList], path: &Path, tag: &str) -> Result<()> {
    for list in lists {
        list.validate()?;
    }
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::Argument(format!(
            "run tag {tag:?} must be a single non-empty word"
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    format_run(lists, tag, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Tsv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "tsv" => Ok(ReportFormat::Tsv),
            other => Err(Error::Argument(format!("unknown report format {other:?}"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Tsv => "tsv",
        })
    }
}

/// Marker written in place of a metric that was not computed.
pub const NULL_MARKER: &str = "null";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => NULL_MARKER.to_string(),
    }
}

pub const REPORT_TSV_COLUMNS: [&str; 10] = [
    "query_id",
    "ndcg",
    "mrc",
    "mer",
    "s_c",
    "fidelity",
    "jaccard",
    "n_docs",
    "n_degenerate",
    "n_truncated",
];

/// Render a report as TSV: `#`-prefixed parameter lines, a header, one row
/// per query and a final `all` row holding the aggregates.
pub fn format_report_tsv<W: Write>(report: &EvalReport, mut out: W) -> std::io::Result<()> {
    let params = serde_json::to_value(&report.params).map_err(std::io::Error::other)?;
    if let serde_json::Value::Object(map) = params {
        for (key, value) in map {
            let rendered = match value {
                serde_json::Value::String(s) => s,
                serde_json::Value::Null => NULL_MARKER.to_string(),
                other => other.to_string(),
            };
            writeln!(out, "# {key}={rendered}")?;
        }
    }
    writeln!(out, "{}", REPORT_TSV_COLUMNS.join("\t"))?;
    for q in &report.per_query {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            q.query_id,
            fmt_opt(q.ndcg),
            fmt_opt(q.mrc),
            fmt_opt(q.mer),
            fmt_opt(q.s_c),
            fmt_opt(q.fidelity),
            fmt_opt(q.jaccard),
            q.n_docs,
            q.degenerate_docs.len(),
            q.truncated_docs,
        )?;
    }
    let a = &report.aggregate;
    let n_docs: usize = report.per_query.iter().map(|q| q.n_docs).sum();
    let n_degenerate: usize = report
        .per_query
        .iter()
        .map(|q| q.degenerate_docs.len())
        .sum();
    let n_truncated: usize = report.per_query.iter().map(|q| q.truncated_docs).sum();
    writeln!(
        out,
        "all\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        fmt_opt(a.ndcg),
        fmt_opt(a.mrc),
        fmt_opt(a.mer),
        fmt_opt(a.s_c),
        fmt_opt(a.fidelity),
        fmt_opt(a.jaccard),
        n_docs,
        n_degenerate,
        n_truncated,
    )
}

pub fn report_to_json(report: &EvalReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)
        .map_err(|e| Error::State(format!("cannot serialise report: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    match format {
        ReportFormat::Json => out
            .write_all(report_to_json(report)?.as_bytes())
            .map_err(|e| Error::io(path, e))?,
        ReportFormat::Tsv => format_report_tsv(report, &mut out).map_err(|e| Error::io(path, e))?,
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::parse(source_name(path), e.line(), e.to_string()))
}

/// Read a newline-separated word list (abbreviations, stopwords). Blank lines
/// and `#` comments are skipped; entries are lowercased.
pub fn load_word_list(path: &Path) -> Result<Vec<String>> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&s))
}

pub fn parse_word_list(s: &str) -> Vec<String> {
    s.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{AggregateMetrics, Exclusions, QueryMetrics, ReportParams};

    fn corpus(s: &str, format: TextFormat) -> Result<Corpus> {
        parse_corpus(s.as_bytes(), format, "test")
    }

    #[test]
    fn jsonl_record_maps_fields() {
        let c = corpus(r#"{"id":"d1","text":"a b"}"#, TextFormat::Jsonl).unwrap();
        assert_eq!(c.get("d1"), Some(&Document::new("d1", "a b")));
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(corpus("", TextFormat::Jsonl).unwrap().is_empty());
    }

    #[test]
    fn duplicate_doc_id_rejected() {
        let err = corpus(
            "{\"id\":\"d1\",\"text\":\"a\"}\n{\"id\":\"d1\",\"text\":\"b\"}\n",
            TextFormat::Jsonl,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = corpus(
            "{\"id\":\"d1\",\"text\":\"a\"}\nnot json\n",
            TextFormat::Jsonl,
        )
        .unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn tsv_corpus_and_empty_text() {
        let c = corpus("d1\thello world\nd2\t\n", TextFormat::Tsv).unwrap();
        assert_eq!(c.get("d1").unwrap().text, "hello world");
        assert_eq!(c.get("d2").unwrap().text, "");
    }

    #[test]
    fn corpus_loading_is_order_independent() {
        let a = corpus("d2\tb\nd1\ta\nd3\tc\n", TextFormat::Tsv).unwrap();
        let b = corpus("d3\tc\nd1\ta\nd2\tb\n", TextFormat::Tsv).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn queries_reject_empty_text() {
        assert!(parse_queries("q1\t  \n".as_bytes(), TextFormat::Tsv, "t").is_err());
        let qs = parse_queries("q2\tb\nq1\ta\n".as_bytes(), TextFormat::Tsv, "t").unwrap();
        assert_eq!(qs[0].query_id, "q1");
    }

    #[test]
    fn qrels_basic_and_last_wins() {
        let mut store = RelevanceStore::new();
        parse_qrels_into("q1 0 d1 2\n".as_bytes(), "t", &mut store).unwrap();
        assert_eq!(store.grade("q1", "d1"), 2);

        let mut store = RelevanceStore::new();
        let repeats =
            parse_qrels_into("q1 0 d1 1\nq1 0 d1 0\n".as_bytes(), "t", &mut store).unwrap();
        assert_eq!(store.grade("q1", "d1"), 0);
        assert_eq!(repeats, 1);
    }

    #[test]
    fn qrels_non_integer_grade() {
        let mut store = RelevanceStore::new();
        let err = parse_qrels_into("q1 0 d1 x\n".as_bytes(), "t", &mut store).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn qrels_grade_above_declared_max() {
        let mut store = RelevanceStore::new().with_max_grade(1);
        assert!(parse_qrels_into("q1 0 d1 3\n".as_bytes(), "t", &mut store).is_err());
    }

    #[test]
    fn qrels_order_independent() {
        let mut a = RelevanceStore::new();
        let mut b = RelevanceStore::new();
        parse_qrels_into("q1 0 d1 1\nq2 0 d3 2\nq1 0 d2 0\n".as_bytes(), "t", &mut a).unwrap();
        parse_qrels_into("q1 0 d2 0\nq1 0 d1 1\nq2 0 d3 2\n".as_bytes(), "t", &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn subdoc_relevance_records() {
        let mut store = RelevanceStore::new();
        let c = corpus("d1\tx\n", TextFormat::Tsv).unwrap();
        parse_subdoc_relevance_into(
            "{\"query_id\":\"q1\",\"doc_id\":\"d1\",\"passages\":[\"p\"]}\n{\"query_id\":\"q1\",\"doc_id\":\"d9\",\"passages\":[]}\n"
                .as_bytes(),
            "t",
            Some(&c),
            &mut store,
        )
        .unwrap();
        assert_eq!(store.relevant_passages("q1", "d1"), ["p".to_string()]);
        // kept despite missing from corpus, empty means non-relevant
        assert!(store.relevant_passages("q1", "d9").is_empty());
        assert!(store.has_subdoc());
    }

    #[test]
    fn subdoc_missing_passages_field() {
        let mut store = RelevanceStore::new();
        let err = parse_subdoc_relevance_into(
            "{\"query_id\":\"q1\",\"doc_id\":\"d1\"}\n".as_bytes(),
            "t",
            None,
            &mut store,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn run_line_parses() {
        let lists = parse_run("q1 Q0 d1 1 3.5 bm25\n".as_bytes(), "t").unwrap();
        assert_eq!(
            lists[0].entries[0],
            RankedEntry {
                doc_id: "d1".into(),
                score: 3.5,
                rank: 1
            }
        );
    }

    #[test]
    fn run_non_consecutive_ranks() {
        let err = parse_run("q1 Q0 d1 1 3.5 t\nq1 Q0 d2 3 2.0 t\n".as_bytes(), "t").unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn run_type_mismatch() {
        assert!(matches!(
            parse_run("q1 Q0 d1 one 3.5 t\n".as_bytes(), "t").unwrap_err(),
            Error::Parse { .. }
        ));
        assert!(matches!(
            parse_run("q1 Q0 d1 1 abc t\n".as_bytes(), "t").unwrap_err(),
            Error::Parse { .. }
        ));
    }

    #[test]
    fn run_round_trip_three_entries() {
        let list = RankedList::from_scores(
            "q1",
            vec![("b".into(), 1.0), ("a".into(), 2.5), ("c".into(), 1.0)],
            10,
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        write_run(std::slice::from_ref(&list), &path, "tag").unwrap();
        let back = read_run(&path).unwrap();
        let ids: Vec<_> = back[0].doc_ids().collect();
        assert_eq!(ids, vec!["a", "b", "c"]);
        assert_eq!(back[0], list);
    }

    fn sample_report(with_mer: bool) -> EvalReport {
        let q = |id: &str, v: f64| QueryMetrics {
            query_id: id.into(),
            n_docs: 2,
            ndcg: Some(v),
            mrc: Some(v),
            mer: with_mer.then_some(v),
            s_c: Some(v),
            fidelity: None,
            jaccard: None,
            degenerate_docs: vec![],
            truncated_docs: 0,
        };
        let per_query = vec![q("q1", 0.5), q("q2", 1.0)];
        EvalReport {
            params: ReportParams::default(),
            aggregate: AggregateMetrics::from_queries(&per_query),
            per_query,
            exclusions: Exclusions::default(),
        }
    }

    #[test]
    fn tsv_report_rows_and_null_marker() {
        let mut buf = Vec::new();
        format_report_tsv(&sample_report(false), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], REPORT_TSV_COLUMNS.join("\t"));
        assert_eq!(rows.len(), 1 + 2 + 1);
        assert!(rows[3].starts_with("all\t"));
        let mer_col = REPORT_TSV_COLUMNS.iter().position(|c| *c == "mer").unwrap();
        for row in &rows[1..] {
            assert_eq!(row.split('\t').nth(mer_col), Some(NULL_MARKER));
        }
        assert!(text.contains("# k="));
        assert!(text.contains("# seed="));
    }

    #[test]
    fn tsv_report_is_stable() {
        let r = sample_report(true);
        let mut a = Vec::new();
        let mut b = Vec::new();
        format_report_tsv(&r, &mut a).unwrap();
        format_report_tsv(&r, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_report_round_trip() {
        let r = sample_report(false);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_report(&r, &path, ReportFormat::Json).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"mer\": null"));
        assert_eq!(read_report(&path).unwrap(), r);
    }

    #[test]
    fn unwritable_report_path() {
        let r = sample_report(true);
        let err = write_report(
            &r,
            Path::new("/nonexistent-dir/x/r.json"),
            ReportFormat::Json,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
