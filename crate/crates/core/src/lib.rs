//! Occlusion-based rationales for ranked retrieval and the metrics that score
//! them: intrinsic consistency (MRC), extrinsic relevance (MER), span fidelity
//! and consistency pooling, Jaccard trustworthiness, and nDCG.
//!
//! The crate is organised bottom-up:
//!
//! - [`corpus_io`]: corpus, queries, qrels, sub-document relevance, run files, reports
//! - [`segmentation`]: tokens, sentences, word windows, sentence chunks, masking
//! - [`scoring`]: BM25 over an inverted index, external scorers, chunked max scoring
//! - [`rationales`]: sampled and greedy occlusion explainers, pseudo-documents, span ablation
//! - [`metrics`]: Kendall's tau, MRC, MER, cosine, nDCG, consistency pooling, Jaccard
//! - [`pipeline`]: end-to-end evaluation runs, score caching, checkpoints, sweeps

pub mod corpus_io;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod rationales;
pub mod scoring;
pub mod segmentation;

pub use error::{Error, Result};
