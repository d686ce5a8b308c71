//! Partial-progress files: a header line with the config hash, then one
//! explanation record per completed document.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rationales::ExplanationRecord;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Header {
    xrank_checkpoint: u32,
    config_hash: String,
}

pub struct Checkpoint {
    path: PathBuf,
    writer: Mutex<BufWriter<File>>,
}

fn read_existing(path: &Path, config_hash: &str) -> Result<Option<Vec<ExplanationRecord>>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut lines = BufReader::new(file).lines();
    let header: Option<Header> = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(|e| Error::io(path, e))?).ok(),
        None => None,
    };
    match header {
        Some(h) if h.xrank_checkpoint == CHECKPOINT_VERSION && h.config_hash == config_hash => {}
        _ => {
            warn!(
                "checkpoint {} belongs to a different configuration; starting over",
                path.display()
            );
            return Ok(None);
        }
    }
    let lines: Vec<String> = lines
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut records = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ExplanationRecord>(line) {
            Ok(r) => records.push(r),
            // a torn final line from an interrupted write
            Err(_) if i + 1 == lines.len() => {
                warn!(
                    "dropping incomplete last line of checkpoint {}",
                    path.display()
                );
            }
            Err(e) => {
                return Err(Error::parse(
                    path.display().to_string(),
                    i + 2,
                    e.to_string(),
                ))
            }
        }
    }
    Ok(Some(records))
}

impl Checkpoint {
    /// Open `path` for a run identified by `config_hash`, returning the
    /// records of a previous run with the same hash. The file is rewritten
    /// with just those records so later appends start on a clean line.
    pub fn open(path: &Path, config_hash: &str) -> Result<(Self, Vec<ExplanationRecord>)> {
        let previous = read_existing(path, config_hash)?.unwrap_or_default();
        if !previous.is_empty() {
            info!(
                "resuming {} explanations from {}",
                previous.len(),
                path.display()
            );
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut writer = BufWriter::new(file);
        let header = Header {
            xrank_checkpoint: CHECKPOINT_VERSION,
            config_hash: config_hash.to_string(),
        };
        let io = |e| Error::io(path, e);
        writeln!(
            writer,
            "{}",
            serde_json::to_string(&header).expect("header serialises")
        )
        .map_err(io)?;
        for r in &previous {
            writeln!(
                writer,
                "{}",
                serde_json::to_string(r).expect("record serialises")
            )
            .map_err(io)?;
        }
        writer.flush().map_err(io)?;
        Ok((
            Self {
                path: path.to_path_buf(),
                writer: Mutex::new(writer),
            },
            previous,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Append one record and flush it to disk.
    pub fn append(&self, record: &ExplanationRecord) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::State(e.to_string()))?;
        let mut w = self.writer.lock().expect("checkpoint writer poisoned");
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
