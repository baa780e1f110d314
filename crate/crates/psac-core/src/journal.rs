//! Append-only journaling with per-stream dense sequence numbers.
//!
//! Every durable fact in the system is one [`JournalRecord`]: which command
//! an object accepted, which effect it applied, how a participant voted,
//! what a coordinator decided. Streams are independent logs keyed by a
//! string name (one per object actor, coordinator, or participant), and a
//! record is only acknowledged once the backend has written it, so replaying
//! a stream after a crash reconstructs exactly the acknowledged prefix.
//!
//! Two backends: an in-memory map for simulation (with optional write-fault
//! injection) and a JSONL file that flushes on every append.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::command::{Command, CommandId, EntityAddr, Resolution, TxnId, Vote};

/// What kind of reply an actor sent, journaled so a recovered actor does not
/// re-send a contradictory one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplyKind {
    Started,
    Failed,
    SuccessNotified,
    Applied,
}

/// The durable payload of one journal record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "snake_case")]
pub enum JournalPayload {
    /// An object admitted this command, or a coordinator enrolled it.
    CommandAccepted { entity: EntityAddr, cmd: Command },
    /// The object applied this command's effect to its base state.
    EffectApplied { id: CommandId },
    /// A participant's vote for its transaction.
    Vote { id: CommandId, vote: Vote },
    /// The coordinator's global decision for a transaction.
    Decision { txn: TxnId, resolution: Resolution },
    /// A per-command resolution as processed by an object.
    Resolution { id: CommandId, resolution: Resolution },
    /// A terminal reply the actor sent without admitting the command.
    ReplyEmitted { id: CommandId, reply: ReplyKind },
}

/// One acknowledged journal entry. `seq` is dense per stream starting at 0;
/// `t` is the simulation clock in microseconds at append time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalRecord {
    pub stream: String,
    pub seq: u64,
    pub t: u64,
    #[serde(flatten)]
    pub payload: JournalPayload,
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal write failed: {0}")]
    WriteFailed(String),
    #[error("journal io: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal record malformed at {path}:{line}: {source}")]
    Malformed {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("stream {stream} has seq {found} where {expected} was expected")]
    NonDenseSeq {
        stream: String,
        expected: u64,
        found: u64,
    },
    #[error("failed to encode journal record: {0}")]
    Encode(#[from] serde_json::Error),
}

enum Backend {
    Memory {
        /// When true, the next append fails and the record is lost.
        fail_next: bool,
    },
    File {
        path: PathBuf,
        writer: BufWriter<File>,
    },
}

/// The journal store. Keeps all acknowledged records in memory for replay;
/// the file backend additionally writes through to disk on every append.
pub struct Journal {
    streams: BTreeMap<String, Vec<JournalRecord>>,
    backend: Backend,
}

impl fmt::Debug for Journal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.backend {
            Backend::Memory { .. } => "memory",
            Backend::File { .. } => "file",
        };
        f.debug_struct("Journal")
            .field("backend", &kind)
            .field("streams", &self.streams.len())
            .finish()
    }
}

impl Journal {
    pub fn in_memory() -> Journal {
        Journal {
            streams: BTreeMap::new(),
            backend: Backend::Memory { fail_next: false },
        }
    }

    /// Opens a JSONL-backed journal, replaying any existing records so
    /// sequence numbers continue where the previous process stopped.
    pub fn open(path: impl AsRef<Path>) -> Result<Journal, JournalError> {
        let path = path.as_ref().to_path_buf();
        let mut streams: BTreeMap<String, Vec<JournalRecord>> = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (idx, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: JournalRecord =
                    serde_json::from_str(&line).map_err(|source| JournalError::Malformed {
                        path: path.clone(),
                        line: idx + 1,
                        source,
                    })?;
                let stream = streams.entry(record.stream.clone()).or_default();
                let expected = stream.len() as u64;
                if record.seq != expected {
                    return Err(JournalError::NonDenseSeq {
                        stream: record.stream,
                        expected,
                        found: record.seq,
                    });
                }
                stream.push(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Journal {
            streams,
            backend: Backend::File {
                path,
                writer: BufWriter::new(file),
            },
        })
    }

    /// Arms the in-memory backend to fail the next append. No-op for files.
    pub fn inject_write_fault(&mut self) {
        if let Backend::Memory { fail_next } = &mut self.backend {
            *fail_next = true;
        }
    }

    /// Appends one record and returns its sequence number. The record is
    /// durable (and visible to replay) only if this returns Ok.
    pub fn append(
        &mut self,
        stream: &str,
        t: u64,
        payload: JournalPayload,
    ) -> Result<u64, JournalError> {
        if let Backend::Memory { fail_next } = &mut self.backend {
            if *fail_next {
                *fail_next = false;
                return Err(JournalError::WriteFailed("injected fault".into()));
            }
        }
        let entries = self.streams.entry(stream.to_string()).or_default();
        let seq = entries.len() as u64;
        let record = JournalRecord {
            stream: stream.to_string(),
            seq,
            t,
            payload,
        };
        if let Backend::File { writer, .. } = &mut self.backend {
            serde_json::to_writer(&mut *writer, &record)?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        entries.push(record);
        Ok(seq)
    }

    /// All acknowledged records of one stream, in append order.
    pub fn replay(&self, stream: &str) -> &[JournalRecord] {
        self.streams.get(stream).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn stream_names(&self) -> impl Iterator<Item = &str> {
        self.streams.keys().map(String::as_str)
    }

    pub fn stream_len(&self, stream: &str) -> usize {
        self.streams.get(stream).map_or(0, Vec::len)
    }

    pub fn total_appends(&self) -> u64 {
        self.streams.values().map(|v| v.len() as u64).sum()
    }

    /// Path of the backing file, if any.
    pub fn path(&self) -> Option<&Path> {
        match &self.backend {
            Backend::File { path, .. } => Some(path),
            Backend::Memory { .. } => None,
        }
    }
}
