//! Append-only, line-delimited JSON event log.
//!
//! Every line is one [`LogRecord`]. Sequence numbers start at 1 and increase
//! by one per record. A final line that does not parse (typically cut short
//! by a crash mid-write) is treated as a partial record and discarded; any
//! other malformed line is corruption.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{ModerationResponse, RevealEvent, SessionStarted};
use crate::survey::SurveyResponse;

pub const LOG_FILE: &str = "events.jsonl";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt log at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum LogEvent {
    SessionStarted(SessionStarted),
    TaskServed { image_id: String },
    Reveal(RevealEvent),
    Response(ModerationResponse),
    Survey(SurveyResponse),
    SessionCompleted {},
}

impl LogEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            LogEvent::SessionStarted(_) => "session_started",
            LogEvent::TaskServed { .. } => "task_served",
            LogEvent::Reveal(_) => "reveal",
            LogEvent::Response(_) => "response",
            LogEvent::Survey(_) => "survey",
            LogEvent::SessionCompleted {} => "session_completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub seq: u64,
    pub at_ms: u64,
    pub session_id: String,
    #[serde(flatten)]
    pub event: LogEvent,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("log records serialize");
        line.push('\n');
        line
    }
}

/// Records recovered from a log file.
#[derive(Debug, Clone, Default)]
pub struct LogContents {
    pub records: Vec<LogRecord>,
    pub partial_records_skipped: usize,
    /// Byte length of the intact prefix.
    pub valid_len: u64,
}

pub fn parse_log(bytes: &[u8]) -> Result<LogContents, LogError> {
    let mut out = LogContents::default();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let (line, terminated, next) = match bytes[offset..].iter().position(|b| *b == b'\n') {
            Some(i) => (&bytes[offset..offset + i], true, offset + i + 1),
            None => (&bytes[offset..], false, bytes.len()),
        };
        let is_last = next >= bytes.len();
        let blank = line.iter().all(u8::is_ascii_whitespace);
        match serde_json::from_slice::<LogRecord>(line) {
            Ok(record) if terminated => {
                let expected = out.records.last().map_or(1, |r| r.seq + 1);
                if record.seq != expected {
                    return Err(LogError::Corrupt {
                        line: line_no,
                        reason: format!("sequence {} where {expected} was expected", record.seq),
                    });
                }
                out.records.push(record);
                out.valid_len = next as u64;
            }
            // Unterminated or unparseable: tolerable only as the final line.
            _ if is_last => {
                if !blank {
                    out.partial_records_skipped += 1;
                }
            }
            Ok(_) => unreachable!("only the final line can lack a terminator"),
            Err(e) => {
                let reason = if blank { "blank line".to_string() } else { e.to_string() };
                return Err(LogError::Corrupt { line: line_no, reason });
            }
        }
        offset = next;
    }
    Ok(out)
}

pub fn read_log(path: &Path) -> Result<LogContents, LogError> {
    let bytes = std::fs::read(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_log(&bytes)
}

/// Single-writer handle to a log file.
#[derive(Debug)]
pub struct EventLogWriter {
    path: PathBuf,
    file: File,
    next_seq: u64,
    fsync: bool,
}

impl EventLogWriter {
    /// Opens (creating if needed) a log, drops any partial tail record and
    /// returns the intact records for replay.
    pub fn open(path: &Path, fsync: bool) -> Result<(Self, LogContents), LogError> {
        let io = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
        }
        let contents = if path.exists() {
            read_log(path)?
        } else {
            LogContents::default()
        };
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)
            .map_err(io)?;
        file.set_len(contents.valid_len).map_err(io)?;
        let mut file = file;
        use std::io::Seek;
        file.seek(std::io::SeekFrom::End(0)).map_err(io)?;
        let next_seq = contents.records.last().map_or(1, |r| r.seq + 1);
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                next_seq,
                fsync,
            },
            contents,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Writes one record and, when enabled, syncs it to disk before returning.
    pub fn append(&mut self, at_ms: u64, session_id: &str, event: LogEvent) -> Result<LogRecord, LogError> {
        let record = LogRecord {
            seq: self.next_seq,
            at_ms,
            session_id: session_id.to_string(),
            event,
        };
        let io = |source| LogError::Io {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(record.to_line().as_bytes()).map_err(io)?;
        self.file.flush().map_err(io)?;
        if self.fsync {
            self.file.sync_data().map_err(io)?;
        }
        self.next_seq += 1;
        Ok(record)
    }
}
