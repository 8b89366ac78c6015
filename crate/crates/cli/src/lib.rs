//! Operator tooling behind the `veilmod` binary.
//!
//! Every subcommand is a plain function here so it can be driven from tests.
//! Failures carry one of the process exit codes: 1 for I/O, 2 for invalid
//! input, 3 when there is nothing to report.

pub mod commands;
pub mod profile;
pub mod sim;
pub mod trace;

use std::path::Path;

use veilmod_core::config::ConfigError;
use veilmod_core::corpus::CorpusError;
use veilmod_core::eventlog::LogError;
use veilmod_core::experiment::ExperimentError;
use veilmod_server::ServerError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Io = 1,
    Validation = 2,
    NoData = 3,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(ExitKind::Io, format!("{}: {e}", path.display()))
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Validation, message)
    }

    /// Runtime failures (connection errors, unexpected replies) exit as I/O.
    pub fn other(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Io, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        let kind = match e {
            CorpusError::Io { .. } => ExitKind::Io,
            _ => ExitKind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let kind = match e {
            ConfigError::Io { .. } => ExitKind::Io,
            _ => ExitKind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<LogError> for CliError {
    fn from(e: LogError) -> Self {
        let kind = match e {
            LogError::Io { .. } => ExitKind::Io,
            _ => ExitKind::Validation,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ServerError> for CliError {
    fn from(e: ServerError) -> Self {
        match e {
            ServerError::Corpus(c) => c.into(),
            ServerError::Log(l) => l.into(),
            ServerError::Io { .. } | ServerError::Render(_) => Self::new(ExitKind::Io, e.to_string()),
            ServerError::Instruments(_) => Self::validation(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::State(m) if m == "no data" => Self::new(ExitKind::NoData, "no data"),
            ExperimentError::Log(l) => l.into(),
            other => Self::validation(other.to_string()),
        }
    }
}
