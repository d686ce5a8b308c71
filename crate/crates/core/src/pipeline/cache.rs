//! Memoising scorer wrapper.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::scoring::{Scorer, ScorerHandle, ScorerKind};

type Key = ([u8; 32], [u8; 32]);

fn digest(s: &str) -> [u8; 32] {
    Sha256::digest(s.as_bytes()).into()
}

/// Caches scores of a deterministic scorer keyed by (query hash, text hash).
/// The cache lives for one scorer, so its fingerprint is implicit in the key.
/// Non-deterministic scorers are passed through untouched.
pub struct ScoreCache {
    inner: ScorerHandle,
    map: Mutex<HashMap<Key, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn new(inner: ScorerHandle) -> Self {
        Self {
            inner,
            map: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("score cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Scorer for ScoreCache {
    fn kind(&self) -> ScorerKind {
        self.inner.kind()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }

    fn score_texts(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>> {
        if !self.inner.is_deterministic() {
            return self.inner.score_batch(query, texts);
        }
        let qh = digest(query);
        let keys: Vec<Key> = texts.iter().map(|t| (qh, digest(t))).collect();
        let mut out = vec![f64::NAN; texts.len()];
        // distinct missing texts, each scored once
        let mut missing: Vec<usize> = Vec::new();
        {
            let map = self.map.lock().expect("score cache poisoned");
            let mut queued: HashMap<&Key, ()> = HashMap::new();
            for (i, key) in keys.iter().enumerate() {
                match map.get(key) {
                    Some(&s) => out[i] = s,
                    None => {
                        if queued.insert(key, ()).is_none() {
                            missing.push(i);
                        }
                    }
                }
            }
        }
        self.hits
            .fetch_add((texts.len() - missing.len()) as u64, Ordering::Relaxed);
        self.misses
            .fetch_add(missing.len() as u64, Ordering::Relaxed);
        if !missing.is_empty() {
            let batch: Vec<&str> = missing.iter().map(|&i| texts[i]).collect();
            let scores = self.inner.score_batch(query, &batch)?;
            let mut map = self.map.lock().expect("score cache poisoned");
            for (&i, s) in missing.iter().zip(scores) {
                map.insert(keys[i], s);
            }
            for (i, key) in keys.iter().enumerate() {
                if out[i].is_nan() {
                    out[i] = map[key];
                }
            }
        }
        Ok(out)
    }
}
