//! Client for out-of-process scorers speaking newline-delimited JSON.
//!
//! ```text
//! request:  {"id": 7, "query": "...", "texts": ["...", ...]}
//! response: {"id": 7, "scores": [1.5, ...]}
//! error:    {"id": 7, "error": "..."}
//! ```
//!
//! One connection carries any number of in-flight requests. Writes are
//! serialised under a lock; a reader thread routes each response to the
//! caller waiting on its id.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{Scorer, ScorerKind};
use crate::error::{Error, Result, ScorerError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub id: u64,
    pub query: String,
    pub texts: Vec<String>,
}

/// A response line: exactly one of `scores` or `error` is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Endpoint {
    /// Spawn a process and talk over its stdin/stdout. The string is split shell-style.
    Command(String),
    /// Connect to `host:port`.
    Tcp(String),
}

impl Endpoint {
    pub fn describe(&self) -> String {
        match self {
            Endpoint::Command(c) => format!("cmd:{c}"),
            Endpoint::Tcp(a) => format!("tcp:{a}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub timeout_ms: u64,
    pub max_batch: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        Self {
            timeout_ms: 60_000,
            max_batch: 64,
        }
    }
}

type Reply = std::result::Result<Vec<f64>, ScorerError>;

#[derive(Default)]
struct Pending {
    waiters: HashMap<u64, Sender<Reply>>,
    /// Set once the connection is unusable; every later request fails with it.
    broken: Option<ScorerError>,
}

impl Pending {
    fn fail_all(&mut self, err: ScorerError) {
        for (_, tx) in self.waiters.drain() {
            let _ = tx.send(Err(err.clone()));
        }
        self.broken.get_or_insert(err);
    }
}

pub struct ExternalScorer {
    endpoint: Endpoint,
    config: ExternalConfig,
    writer: Mutex<Box<dyn Write + Send>>,
    pending: Arc<Mutex<Pending>>,
    next_id: AtomicU64,
    child: Mutex<Option<Child>>,
    socket: Option<TcpStream>,
}

impl std::fmt::Debug for ExternalScorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalScorer")
            .field("endpoint", &self.endpoint)
            .field("config", &self.config)
            .finish()
    }
}

impl ExternalScorer {
    /// Connect (or spawn), start the reader thread and perform the handshake.
    pub fn connect(endpoint: Endpoint, config: ExternalConfig) -> Result<Self> {
        let mut socket = None;
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, Option<Child>) =
            match &endpoint {
                Endpoint::Command(cmd) => {
                    let argv = shlex::split(cmd).filter(|a| !a.is_empty()).ok_or_else(|| {
                        Error::Argument(format!("cannot parse scorer command {cmd:?}"))
                    })?;
                    let mut child = Command::new(&argv[0])
                        .args(&argv[1..])
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .stderr(Stdio::inherit())
                        .spawn()
                        .map_err(|e| ScorerError::Unreachable {
                            address: cmd.clone(),
                            message: e.to_string(),
                        })?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = child.stdout.take().expect("piped stdout");
                    (Box::new(stdout), Box::new(stdin), Some(child))
                }
                Endpoint::Tcp(addr) => {
                    let unreachable = |message: String| ScorerError::Unreachable {
                        address: addr.clone(),
                        message,
                    };
                    let sock_addr = addr
                        .to_socket_addrs()
                        .map_err(|e| unreachable(e.to_string()))?
                        .next()
                        .ok_or_else(|| unreachable("address resolved to nothing".into()))?;
                    let timeout = Duration::from_millis(config.timeout_ms.max(1));
                    let stream = TcpStream::connect_timeout(&sock_addr, timeout)
                        .map_err(|e| unreachable(e.to_string()))?;
                    stream.set_nodelay(true).ok();
                    let read_half = stream.try_clone().map_err(|e| unreachable(e.to_string()))?;
                    socket = stream.try_clone().ok();
                    (Box::new(read_half), Box::new(stream), None)
                }
            };

        let pending = Arc::new(Mutex::new(Pending::default()));
        spawn_reader(reader, Arc::clone(&pending), endpoint.describe());
        let scorer = Self {
            endpoint,
            config,
            writer: Mutex::new(writer),
            pending,
            next_id: AtomicU64::new(1),
            child: Mutex::new(child),
            socket,
        };
        scorer.handshake()?;
        Ok(scorer)
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn handshake(&self) -> Result<()> {
        let rx = self.submit(0, "", &[])?;
        match self.wait(0, rx) {
            Ok(scores) if scores.is_empty() => Ok(()),
            Ok(scores) => Err(ScorerError::Handshake(format!(
                "expected empty scores, got {} values",
                scores.len()
            ))
            .into()),
            Err(e) => Err(ScorerError::Handshake(e.to_string()).into()),
        }
    }

    fn submit(&self, id: u64, query: &str, texts: &[&str]) -> Result<mpsc::Receiver<Reply>> {
        let (tx, rx) = mpsc::channel();
        {
            let mut pending = self.pending.lock().expect("pending lock");
            if let Some(err) = &pending.broken {
                return Err(err.clone().into());
            }
            pending.waiters.insert(id, tx);
        }
        let request = ScoreRequest {
            id,
            query: query.to_string(),
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let mut line = serde_json::to_string(&request).expect("request serialises");
        line.push('\n');
        let write_result = {
            let mut w = self.writer.lock().expect("writer lock");
            w.write_all(line.as_bytes()).and_then(|_| w.flush())
        };
        if let Err(e) = write_result {
            let err =
                ScorerError::Closed(format!("write to {} failed: {e}", self.endpoint.describe()));
            self.pending
                .lock()
                .expect("pending lock")
                .fail_all(err.clone());
            return Err(err.into());
        }
        Ok(rx)
    }

    fn wait(
        &self,
        id: u64,
        rx: mpsc::Receiver<Reply>,
    ) -> std::result::Result<Vec<f64>, ScorerError> {
        match rx.recv_timeout(Duration::from_millis(self.config.timeout_ms)) {
            Ok(reply) => reply,
            Err(RecvTimeoutError::Timeout) => {
                self.pending
                    .lock()
                    .expect("pending lock")
                    .waiters
                    .remove(&id);
                Err(ScorerError::Timeout {
                    request_id: id,
                    timeout_ms: self.config.timeout_ms,
                })
            }
            Err(RecvTimeoutError::Disconnected) => {
                let pending = self.pending.lock().expect("pending lock");
                Err(pending
                    .broken
                    .clone()
                    .unwrap_or_else(|| ScorerError::Closed("reader stopped".into())))
            }
        }
    }

    fn checked(
        id: u64,
        expected: usize,
        reply: std::result::Result<Vec<f64>, ScorerError>,
    ) -> Result<Vec<f64>> {
        let scores = reply?;
        if scores.len() != expected {
            return Err(ScorerError::Protocol {
                request_id: id,
                message: format!("expected {expected} scores, got {}", scores.len()),
            }
            .into());
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(ScorerError::NonFinite { request_id: id }.into());
        }
        Ok(scores)
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        if let Some(socket) = &self.socket {
            let _ = socket.shutdown(std::net::Shutdown::Both);
        }
        if let Ok(mut guard) = self.child.lock() {
            if let Some(mut child) = guard.take() {
                let _ = child.kill();
                let _ = child.wait();
            }
        }
    }
}

fn spawn_reader(reader: Box<dyn Read + Send>, pending: Arc<Mutex<Pending>>, name: String) {
    thread::Builder::new()
        .name("xrank-scorer-reader".into())
        .spawn(move || {
            let mut reader = BufReader::new(reader);
            let mut line = String::new();
            loop {
                line.clear();
                match reader.read_line(&mut line) {
                    Ok(0) => {
                        pending
                            .lock()
                            .expect("pending lock")
                            .fail_all(ScorerError::Closed(format!("{name} closed the connection")));
                        return;
                    }
                    Err(e) => {
                        pending
                            .lock()
                            .expect("pending lock")
                            .fail_all(ScorerError::Closed(format!("read from {name} failed: {e}")));
                        return;
                    }
                    Ok(_) => {}
                }
                let text = line.trim();
                if text.is_empty() {
                    continue;
                }
                dispatch(text, &pending);
            }
        })
        .expect("spawn scorer reader thread");
}

fn dispatch(line: &str, pending: &Mutex<Pending>) {
    let value: serde_json::Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => {
            // Without an id we cannot tell which request this belongs to.
            let mut p = pending.lock().expect("pending lock");
            let id = p.waiters.keys().min().copied().unwrap_or(0);
            p.fail_all(ScorerError::Protocol {
                request_id: id,
                message: format!("malformed response line: {e}"),
            });
            return;
        }
    };
    let Some(id) = value.get("id").and_then(serde_json::Value::as_u64) else {
        let mut p = pending.lock().expect("pending lock");
        let id = p.waiters.keys().min().copied().unwrap_or(0);
        p.fail_all(ScorerError::Protocol {
            request_id: id,
            message: "response without a numeric id".into(),
        });
        return;
    };
    let reply: Reply = match serde_json::from_value::<ScoreResponse>(value) {
        Ok(ScoreResponse {
            error: Some(message),
            ..
        }) => Err(ScorerError::Remote {
            request_id: id,
            message,
        }),
        Ok(ScoreResponse {
            scores: Some(scores),
            ..
        }) => Ok(scores),
        Ok(_) => Err(ScorerError::Protocol {
            request_id: id,
            message: "response has neither scores nor error".into(),
        }),
        Err(e) => Err(ScorerError::Protocol {
            request_id: id,
            message: e.to_string(),
        }),
    };
    let waiter = pending.lock().expect("pending lock").waiters.remove(&id);
    match waiter {
        Some(tx) => {
            let _ = tx.send(reply);
        }
        None => warn!("dropping scorer response for unknown or expired request {id}"),
    }
}

impl Scorer for ExternalScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::External
    }

    fn fingerprint(&self) -> String {
        format!("external:{}", self.endpoint.describe())
    }

    fn max_batch(&self) -> usize {
        self.config.max_batch.max(1)
    }

    fn score_texts(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>> {
        Ok(self.score_batches(query, &[texts])?.remove(0))
    }

    /// Send every batch before waiting on any, so round-trips overlap.
    fn score_batches(&self, query: &str, batches: &[&[&str]]) -> Result<Vec<Vec<f64>>> {
        let mut in_flight = Vec::with_capacity(batches.len());
        for batch in batches {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            debug!("scorer request {id}: {} texts", batch.len());
            in_flight.push((id, batch.len(), self.submit(id, query, batch)?));
        }
        in_flight
            .into_iter()
            .map(|(id, n, rx)| Self::checked(id, n, self.wait(id, rx)))
            .collect()
    }
}
