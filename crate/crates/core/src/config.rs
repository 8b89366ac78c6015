//! Experiment configuration shared by the server and the operator CLI.
//!
//! Loaded from TOML; relative paths resolve against the config file's
//! directory. A handful of `VEILMOD_*` environment variables override the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::LOG_FILE;
use crate::experiment::ExperimentSettings;
use crate::stage::{validate_levels, DEFAULT_REGION_RADIUS, DEFAULT_SLIDER_LEVELS};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}
fn default_stages() -> Vec<u8> {
    vec![1, 2, 3, 4, 5, 6]
}
fn default_tasks() -> usize {
    6
}
fn default_radius() -> u32 {
    DEFAULT_REGION_RADIUS
}
fn default_max_radius() -> u32 {
    200
}
fn default_levels() -> Vec<f64> {
    DEFAULT_SLIDER_LEVELS.to_vec()
}
fn default_ttl() -> u64 {
    7200
}
fn default_true() -> bool {
    true
}
fn default_jpeg_quality() -> u8 {
    90
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    /// Corpus directory holding `manifest.csv`.
    pub corpus: PathBuf,
    /// Root for per-experiment log directories.
    pub log_dir: PathBuf,
    /// Blur rendition cache; defaults to `<corpus>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_listen")]
    pub listen: String,
    #[serde(default = "default_stages")]
    pub stages: Vec<u8>,
    #[serde(default = "default_tasks")]
    pub tasks_per_session: usize,
    #[serde(default)]
    pub seed: u64,
    /// Reveal region radius used by clients, in pixels.
    #[serde(default = "default_radius")]
    pub region_radius: u32,
    /// Largest radius (or half-extent) a tile request may ask for.
    #[serde(default = "default_max_radius")]
    pub region_max_radius: u32,
    #[serde(default = "default_levels")]
    pub slider_levels: Vec<f64>,
    #[serde(default = "default_ttl")]
    pub session_ttl_secs: u64,
    /// Bearer token for admin routes. Admin routes are closed when unset.
    #[serde(default)]
    pub admin_token: Option<String>,
    /// Sync every appended record to disk before acknowledging it.
    #[serde(default = "default_true")]
    pub fsync: bool,
    #[serde(default = "default_jpeg_quality")]
    pub jpeg_quality: u8,
    /// Instrument-definition file; the built-in battery is used when unset.
    #[serde(default)]
    pub instruments: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Minimal config with defaults for everything optional.
    pub fn new(experiment_id: &str, corpus: impl Into<PathBuf>, log_dir: impl Into<PathBuf>) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            corpus: corpus.into(),
            log_dir: log_dir.into(),
            cache_dir: None,
            listen: default_listen(),
            stages: default_stages(),
            tasks_per_session: default_tasks(),
            seed: 0,
            region_radius: default_radius(),
            region_max_radius: default_max_radius(),
            slider_levels: default_levels(),
            session_ttl_secs: default_ttl(),
            admin_token: None,
            fsync: true,
            jpeg_quality: default_jpeg_quality(),
            instruments: None,
        }
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Reads a config file and applies environment overrides.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut cfg = Self::from_toml_str(&text, base)?;
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.log_dir);
        if let Some(c) = &mut self.cache_dir {
            fix(c);
        }
        if let Some(i) = &mut self.instruments {
            fix(i);
        }
    }

    /// Applies `VEILMOD_LISTEN`, `VEILMOD_CORPUS`, `VEILMOD_LOG_DIR`,
    /// `VEILMOD_REGION_MAX_RADIUS`, `VEILMOD_SLIDER_LEVELS` (comma separated)
    /// and `VEILMOD_ADMIN_TOKEN`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (key, value) in vars {
            match key.as_str() {
                "VEILMOD_LISTEN" => self.listen = value,
                "VEILMOD_CORPUS" => self.corpus = value.into(),
                "VEILMOD_LOG_DIR" => self.log_dir = value.into(),
                "VEILMOD_ADMIN_TOKEN" => self.admin_token = Some(value),
                "VEILMOD_REGION_MAX_RADIUS" => {
                    self.region_max_radius = value
                        .parse()
                        .map_err(|_| ConfigError::Invalid(format!("{key}={value:?} is not an integer")))?
                }
                "VEILMOD_SLIDER_LEVELS" => self.slider_levels = parse_sigma_list(&value)?,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.experiment_id.is_empty()
            || !self
                .experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "experiment_id {:?} must be non-empty and use only [A-Za-z0-9_-]",
                self.experiment_id
            ));
        }
        if self.stages.is_empty() {
            return bad("stages must not be empty".into());
        }
        if let Some(s) = self.stages.iter().find(|s| !(1..=6).contains(*s)) {
            return bad(format!("stage {s} is outside 1..=6"));
        }
        if self.tasks_per_session == 0 {
            return bad("tasks_per_session must be at least 1".into());
        }
        if self.region_radius == 0 || self.region_max_radius == 0 {
            return bad("region radii must be positive".into());
        }
        if !(1..=100).contains(&self.jpeg_quality) {
            return bad("jpeg_quality must be in 1..=100".into());
        }
        validate_levels(&self.slider_levels, 14.0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.corpus.join(crate::corpus::MANIFEST_FILE)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.corpus.join("cache"))
    }

    /// Directory holding this experiment's event log.
    pub fn experiment_log_dir(&self) -> PathBuf {
        self.log_dir.join(&self.experiment_id)
    }

    pub fn log_file(&self) -> PathBuf {
        self.experiment_log_dir().join(LOG_FILE)
    }

    pub fn settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            stages: self.stages.clone(),
            tasks_per_session: self.tasks_per_session,
            seed: self.seed,
            slider_levels: self.slider_levels.clone(),
            session_ttl_ms: self.session_ttl_secs * 1000,
        }
    }
}

pub fn parse_sigma_list(text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            let v: f64 = s
                .parse()
                .map_err(|_| ConfigError::Invalid(format!("{s:?} is not a number")))?;
            if !v.is_finite() || v < 0.0 {
                return Err(ConfigError::Invalid(format!("sigma {s} must be a non-negative number")));
            }
            Ok(v)
        })
        .collect()
}
