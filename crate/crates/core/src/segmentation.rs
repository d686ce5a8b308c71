//! Tokens, sentences, word windows and sentence chunks.
//!
//! All offsets are byte offsets into the parent text and always fall on
//! UTF-8 character boundaries, so `&text[start..end]` is valid for every
//! token and segment produced here.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus_io::{parse_word_list, Document};
use crate::error::{Error, Result};

const DEFAULT_ABBREVIATIONS: &str = include_str!("../data/abbreviations.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased token text.
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Split `text` into lowercased alphanumeric runs. Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match (c.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                tokens.push(make_token(text, s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(make_token(text, s, text.len()));
    }
    tokens
}

fn make_token(text: &str, start: usize, end: usize) -> Token {
    Token {
        text: text[start..end].to_lowercase(),
        start,
        end,
    }
}

/// Lowercased token strings only.
pub fn token_texts(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Sentence,
    WordWindow,
    Chunk,
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Sentence => "sentence",
            Granularity::WordWindow => "word_window",
            Granularity::Chunk => "chunk",
        })
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence" => Ok(Granularity::Sentence),
            "word_window" | "window" | "word" => Ok(Granularity::WordWindow),
            "chunk" => Ok(Granularity::Chunk),
            other => Err(Error::Argument(format!("unknown granularity {other:?}"))),
        }
    }
}

/// A contiguous span of a document. `text == doc.text[start..end]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub doc_id: String,
    pub granularity: Granularity,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

impl Segment {
    fn from_span(
        doc_id: &str,
        granularity: Granularity,
        index: usize,
        text: &str,
        start: usize,
        end: usize,
    ) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            granularity,
            index,
            start,
            end,
            text: text[start..end].to_string(),
        }
    }

    pub fn overlaps(&self, other: &Segment) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Rule-based sentence splitter with an abbreviation guard.
///
/// A sentence ends at a run of `.`, `!` or `?` (plus any closing quotes or
/// brackets) that is followed by the end of the text, or by whitespace and
/// then an uppercase letter or digit. A single `.` closing a listed
/// abbreviation never ends a sentence.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    abbreviations: HashSet<String>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self::with_abbreviations(parse_word_list(DEFAULT_ABBREVIATIONS))
    }
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

fn is_closer(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | ')' | ']' | '}' | '\u{201d}' | '\u{2019}' | '\u{00bb}'
    )
}

fn is_opener(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | '(' | '[' | '{' | '\u{201c}' | '\u{2018}' | '\u{00ab}'
    )
}

impl SentenceSplitter {
    pub fn with_abbreviations<I, S>(abbreviations: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let abbreviations = abbreviations
            .into_iter()
            .map(|a| a.as_ref().trim().trim_end_matches('.').to_lowercase())
            .filter(|a| !a.is_empty())
            .collect();
        Self { abbreviations }
    }

    pub fn is_abbreviation(&self, word: &str) -> bool {
        self.abbreviations
            .contains(&word.trim_end_matches('.').to_lowercase())
    }

    /// Byte spans of the sentences of `text`, whitespace-trimmed.
    pub fn sentence_spans(&self, text: &str) -> Vec<(usize, usize)> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let byte_at = |ci: usize| chars.get(ci).map_or(text.len(), |&(b, _)| b);
        let mut spans = Vec::new();
        let mut start: Option<usize> = None;
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i].1;
            if start.is_none() {
                if !c.is_whitespace() {
                    start = Some(i);
                }
                if c.is_whitespace() || !is_terminator(c) {
                    i += 1;
                    continue;
                }
            }
            if !is_terminator(c) {
                i += 1;
                continue;
            }
            let term_begin = i;
            let mut j = i;
            while j < chars.len() && is_terminator(chars[j].1) {
                j += 1;
            }
            let single_period = j - term_begin == 1 && c == '.';
            while j < chars.len() && is_closer(chars[j].1) {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let boundary = if k == chars.len() {
                true
            } else if k > j {
                let next = chars[k].1;
                let next = if is_opener(next) {
                    chars.get(k + 1).map_or(next, |&(_, c)| c)
                } else {
                    next
                };
                (next.is_uppercase() || next.is_numeric())
                    && !(single_period && self.ends_with_abbreviation(text, byte_at(term_begin)))
            } else {
                false
            };
            if boundary {
                let s = start.take().expect("sentence start set before terminator");
                spans.push((byte_at(s), byte_at(j)));
                i = k;
            } else {
                i = j;
            }
        }
        if let Some(s) = start {
            let trimmed_end = text.trim_end().len();
            spans.push((byte_at(s), trimmed_end));
        }
        spans
    }

    /// Whether the word ending right before the period at byte `dot` is a listed abbreviation.
    fn ends_with_abbreviation(&self, text: &str, dot: usize) -> bool {
        let before = &text[..dot];
        let word_start = before.rfind(char::is_whitespace).map_or(0, |p| {
            p + before[p..].chars().next().map_or(1, char::len_utf8)
        });
        let word = before[word_start..].trim_start_matches(is_opener);
        !word.is_empty() && self.is_abbreviation(word)
    }

    pub fn split(&self, doc_id: &str, text: &str) -> Vec<Segment> {
        self.sentence_spans(text)
            .into_iter()
            .enumerate()
            .map(|(i, (s, e))| Segment::from_span(doc_id, Granularity::Sentence, i, text, s, e))
            .collect()
    }

    /// Group consecutive sentences into chunks of `chunk_size`; the last chunk may be shorter.
    pub fn chunk(&self, doc_id: &str, text: &str, chunk_size: usize) -> Result<Vec<Segment>> {
        if chunk_size == 0 {
            return Err(Error::Argument("chunk size must be at least 1".into()));
        }
        let spans = self.sentence_spans(text);
        Ok(spans
            .chunks(chunk_size)
            .enumerate()
            .map(|(i, group)| {
                let start = group[0].0;
                let end = group[group.len() - 1].1;
                Segment::from_span(doc_id, Granularity::Chunk, i, text, start, end)
            })
            .collect())
    }
}

/// Sentence segmentation with the default abbreviation list.
pub fn split_sentences(doc_id: &str, text: &str) -> Vec<Segment> {
    SentenceSplitter::default().split(doc_id, text)
}

/// Chunk sentences with the default abbreviation list.
pub fn chunk_sentences(doc_id: &str, text: &str, chunk_size: usize) -> Result<Vec<Segment>> {
    SentenceSplitter::default().chunk(doc_id, text, chunk_size)
}

/// Windows of `w` consecutive tokens starting every `stride` tokens. The final
/// window may be shorter. Each window spans from its first token's start to
/// its last token's end.
pub fn word_windows(doc_id: &str, text: &str, w: usize, stride: usize) -> Result<Vec<Segment>> {
    if w == 0 {
        return Err(Error::Argument("window size w must be at least 1".into()));
    }
    if stride == 0 {
        return Err(Error::Argument("window stride must be at least 1".into()));
    }
    let tokens = tokenize(text);
    let mut out = Vec::new();
    let mut first = 0;
    while first < tokens.len() {
        let last = (first + w).min(tokens.len()) - 1;
        out.push(Segment::from_span(
            doc_id,
            Granularity::WordWindow,
            out.len(),
            text,
            tokens[first].start,
            tokens[last].end,
        ));
        first += stride;
    }
    Ok(out)
}

/// How a document is cut into explanation units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segmentation {
    Sentence,
    WordWindow { w: usize, stride: usize },
    Chunk { size: usize },
}

impl Segmentation {
    pub fn granularity(&self) -> Granularity {
        match self {
            Segmentation::Sentence => Granularity::Sentence,
            Segmentation::WordWindow { .. } => Granularity::WordWindow,
            Segmentation::Chunk { .. } => Granularity::Chunk,
        }
    }

    pub fn segment(&self, splitter: &SentenceSplitter, doc: &Document) -> Result<Vec<Segment>> {
        match *self {
            Segmentation::Sentence => Ok(splitter.split(&doc.doc_id, &doc.text)),
            Segmentation::WordWindow { w, stride } => {
                word_windows(&doc.doc_id, &doc.text, w, stride)
            }
            Segmentation::Chunk { size } => splitter.chunk(&doc.doc_id, &doc.text, size),
        }
    }
}

/// Remove the given byte ranges from `text`. Ranges must be sorted and
/// disjoint. Whitespace meeting at each removal point collapses to one space;
/// an empty range list returns `text` unchanged.
pub(crate) fn remove_ranges(text: &str, ranges: &[(usize, usize)]) -> String {
    if ranges.is_empty() {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    let mut junction = false;
    let push_piece = |out: &mut String, piece: &str, junction: &mut bool| {
        if !*junction {
            out.push_str(piece);
            return;
        }
        let piece = piece.trim_start();
        if piece.is_empty() {
            return;
        }
        out.truncate(out.trim_end().len());
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(piece);
        *junction = false;
    };
    for &(s, e) in ranges {
        push_piece(&mut out, &text[pos..s], &mut junction);
        junction = true;
        pos = e;
    }
    push_piece(&mut out, &text[pos..], &mut junction);
    if junction {
        out.truncate(out.trim_end().len());
    }
    out
}

/// Sort `(start, end)` ranges and merge any that overlap or touch.
pub(crate) fn merge_ranges(mut ranges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    ranges.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(ranges.len());
    for (s, e) in ranges {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

fn check_segment(doc: &Document, seg: &Segment) -> Result<()> {
    if seg.doc_id != doc.doc_id {
        return Err(Error::Argument(format!(
            "segment of {} cannot mask document {}",
            seg.doc_id, doc.doc_id
        )));
    }
    match doc.text.get(seg.start..seg.end) {
        Some(s) if s == seg.text => Ok(()),
        _ => Err(Error::Argument(format!(
            "segment [{}, {}) does not match document {}",
            seg.start, seg.end, doc.doc_id
        ))),
    }
}

/// The pseudo-document `D - S`: the document text with every segment in
/// `segments` removed. Segments may be given in any order but must not overlap.
pub fn mask_segments(doc: &Document, segments: &[Segment]) -> Result<String> {
    let mut ranges = Vec::with_capacity(segments.len());
    for seg in segments {
        check_segment(doc, seg)?;
        ranges.push((seg.start, seg.end));
    }
    ranges.sort_unstable();
    if let Some(w) = ranges.windows(2).find(|w| w[1].0 < w[0].1) {
        return Err(Error::Argument(format!(
            "overlapping segments [{}, {}) and [{}, {}) in {}",
            w[0].0, w[0].1, w[1].0, w[1].1, doc.doc_id
        )));
    }
    Ok(remove_ranges(&doc.text, &ranges))
}

/// Join segment texts in ascending document position with single spaces.
pub fn join_in_document_order<'a>(segments: impl IntoIterator<Item = &'a Segment>) -> String {
    let mut segs: Vec<&Segment> = segments.into_iter().collect();
    segs.sort_by_key(|s| (s.start, s.end));
    segs.iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Collapse every whitespace run to one space and trim the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}
