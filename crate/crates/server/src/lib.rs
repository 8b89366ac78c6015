//! HTTP task server.
//!
//! One process serves one experiment. All state changes go through a single
//! mutex-guarded [`Experiment`] whose recorder is the append-only event log;
//! a record is on disk before the request that caused it is acknowledged.
//! Image pixels leave the server only as renditions at a sigma the session's
//! stage allows, or as reveal tiles that have already been logged.

pub mod cache;
pub mod clock;
mod routes;
pub mod wire;

use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;
use tokio::net::TcpListener;

use veilmod_core::config::ExperimentConfig;
use veilmod_core::corpus::{Corpus, CorpusError};
use veilmod_core::eventlog::{EventLogWriter, LogError};
use veilmod_core::experiment::{Experiment, ExperimentError, ExperimentState};
use veilmod_core::report::{build_report, ReportFormat};
use veilmod_core::survey::Battery;

pub use cache::RenditionCache;
pub use clock::{Clock, ManualClock, OsTokens, SeededTokens, SystemClock, TokenSource};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("instrument definitions: {0}")]
    Instruments(String),
    #[error("render failed: {0}")]
    Render(String),
}

/// Time and randomness used by the server.
#[derive(Clone)]
pub struct ServerOptions {
    pub clock: Arc<dyn Clock>,
    pub tokens: Arc<dyn TokenSource>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            clock: Arc::new(SystemClock),
            tokens: Arc::new(OsTokens),
        }
    }
}

/// What was recovered from the log at startup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpenSummary {
    pub records_replayed: usize,
    pub partial_records_skipped: usize,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ExperimentConfig,
    corpus: Corpus,
    battery: Battery,
    experiment: Mutex<Experiment<EventLogWriter>>,
    cache: RenditionCache,
    options: ServerOptions,
}

/// Loads the instrument battery named by the config, or the built-in one.
pub fn load_battery(config: &ExperimentConfig) -> Result<Battery, ServerError> {
    let Some(path) = &config.instruments else {
        return Ok(Battery::standard());
    };
    let text = std::fs::read_to_string(path).map_err(|source| ServerError::Io {
        path: path.clone(),
        source,
    })?;
    let battery = Battery::from_toml_str(&text).map_err(|e| ServerError::Instruments(e.to_string()))?;
    battery.check().map_err(|e| ServerError::Instruments(e.to_string()))?;
    Ok(battery)
}

impl AppState {
    /// Loads the corpus, replays the experiment log (dropping a torn final
    /// record) and opens it for appending.
    pub fn open(config: ExperimentConfig, options: ServerOptions) -> Result<(Self, OpenSummary), ServerError> {
        let corpus = Corpus::ingest_manifest(&config.manifest_path())?;
        let battery = load_battery(&config)?;
        let (writer, contents) = EventLogWriter::open(&config.log_file(), config.fsync)?;
        if contents.partial_records_skipped > 0 {
            tracing::warn!(
                skipped = contents.partial_records_skipped,
                "dropped a partial record at the end of the event log"
            );
        }
        let summary = OpenSummary {
            records_replayed: contents.records.len(),
            partial_records_skipped: contents.partial_records_skipped,
        };
        let experiment = Experiment::new(config.settings(), battery.clone(), writer, &contents.records);
        let cache = RenditionCache::new(config.cache_dir(), config.jpeg_quality);
        let inner = Inner {
            config,
            corpus,
            battery,
            experiment: Mutex::new(experiment),
            cache,
            options,
        };
        Ok((
            Self {
                inner: Arc::new(inner),
            },
            summary,
        ))
    }

    pub fn router(&self) -> axum::Router {
        routes::router(self.clone())
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.inner.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.inner.corpus
    }

    pub fn battery(&self) -> &Battery {
        &self.inner.battery
    }

    pub fn cache(&self) -> &RenditionCache {
        &self.inner.cache
    }

    pub fn now_ms(&self) -> u64 {
        self.inner.options.clock.now_ms()
    }

    /// Copy of the in-memory experiment state.
    pub fn snapshot(&self) -> ExperimentState {
        self.lock().map(|e| e.state().clone()).unwrap_or_default()
    }

    /// Report over the live in-memory state.
    pub fn report(&self, format: ReportFormat) -> Result<String, ExperimentError> {
        let state = self.snapshot();
        Ok(build_report(&state, &self.inner.battery)?.render(format))
    }

    fn lock(&self) -> Result<MutexGuard<'_, Experiment<EventLogWriter>>, ApiError> {
        self.inner
            .experiment
            .lock()
            .map_err(|_| ApiError::internal("experiment state is unavailable after an earlier failure"))
    }
}

/// Serves until the listener fails or the process is stopped.
pub async fn serve(state: AppState, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, state.router()).await
}

/// JSON error body `{"error": "..."}` with a status code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message)
    }
}

impl From<ExperimentError> for ApiError {
    fn from(e: ExperimentError) -> Self {
        let status = match &e {
            ExperimentError::InvalidParameter(_) | ExperimentError::Validation(_) => StatusCode::BAD_REQUEST,
            ExperimentError::Conflict(_) | ExperimentError::State(_) => StatusCode::CONFLICT,
            ExperimentError::NotFound(_) => StatusCode::NOT_FOUND,
            ExperimentError::Expired(_) => StatusCode::GONE,
            ExperimentError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "event log write failed");
        }
        Self::new(status, e.to_string())
    }
}

impl From<ServerError> for ApiError {
    fn from(e: ServerError) -> Self {
        tracing::error!(error = %e, "request failed");
        Self::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}
