use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use veilmod_core::config::{parse_sigma_list, ExperimentConfig};
use veilmod_core::corpus::{Corpus, CountTable};
use veilmod_core::eventlog::{read_log, LOG_FILE};
use veilmod_core::experiment::ExperimentState;
use veilmod_core::fixture::write_reference_corpus;
use veilmod_core::report::{build_report, ReportFormat};
use veilmod_core::survey::Battery;
use veilmod_server::{load_battery, AppState, ManualClock, RenditionCache, SeededTokens, ServerOptions};

use crate::profile::AccuracyProfile;
use crate::sim::{run_simulation, Embedded, Remote, SimOutcome, SimSettings, SIM_EPOCH_MS};
use crate::trace::write_trace;
use crate::CliError;

/// Validates a manifest, copies the corpus into `out` and returns the
/// category x realism table.
pub fn ingest(manifest: &Path, out: &Path) -> Result<CountTable, CliError> {
    let corpus = Corpus::ingest_manifest(manifest)?;
    let written = corpus.write_dir(out)?;
    Ok(written.category_counts())
}

/// Writes the placeholder corpus with the reference distribution.
pub fn fixture(out: &Path) -> Result<CountTable, CliError> {
    Ok(write_reference_corpus(out)?.category_counts())
}

/// Writes the built-in instrument battery as an editable definition file.
pub fn instruments(out: &Path) -> Result<(), CliError> {
    std::fs::write(out, Battery::standard().to_toml_string()).map_err(|e| CliError::io(out, e))
}

/// Parses a comma-separated sigma list.
pub fn parse_sigmas(text: &str) -> Result<Vec<f64>, CliError> {
    let v = parse_sigma_list(text).map_err(|e| match e {
        veilmod_core::config::ConfigError::Invalid(m) => CliError::validation(format!("sigma list: {m}")),
        other => CliError::validation(other.to_string()),
    })?;
    if v.is_empty() {
        return Err(CliError::validation("no sigmas given"));
    }
    Ok(v)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrewarmSummary {
    pub rendered: usize,
    pub already_cached: usize,
}

/// Renders every (image, sigma) pair not yet in the cache. Idempotent: a
/// second run renders nothing. Failures are collected per image and
/// reported together after all other renditions are done.
pub fn prewarm(corpus_dir: &Path, cache_dir: Option<&Path>, sigmas: &[f64], quality: u8) -> Result<PrewarmSummary, CliError> {
    if !(1..=100).contains(&quality) {
        return Err(CliError::validation("jpeg quality must be in 1..=100"));
    }
    let corpus = Corpus::ingest_manifest(&corpus_dir.join(veilmod_core::corpus::MANIFEST_FILE))?;
    let cache = RenditionCache::new(cache_dir.map_or_else(|| corpus_dir.join("cache"), Path::to_path_buf), quality);
    let mut sigmas = sigmas.to_vec();
    sigmas.sort_by(|a, b| b.total_cmp(a));
    sigmas.dedup_by(|a, b| veilmod_core::stage::same_sigma(*a, *b));
    let jobs: Vec<_> = corpus
        .records()
        .iter()
        .flat_map(|r| sigmas.iter().map(move |s| (r, *s)))
        .collect();

    let next = AtomicUsize::new(0);
    let rendered = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((record, sigma)) = jobs.get(i) else { break };
                match cache.get_or_render(&corpus, record, *sigma) {
                    Ok((_, true)) => {
                        rendered.fetch_add(1, Ordering::Relaxed);
                    }
                    Ok((_, false)) => {}
                    Err(e) => failures.lock().expect("failure list").push(format!("{} sigma {sigma}: {e}", record.id)),
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("failure list");
    if !failures.is_empty() {
        failures.sort();
        return Err(CliError::other(format!(
            "{} rendition(s) failed:\n  {}",
            failures.len(),
            failures.join("\n  ")
        )));
    }
    let rendered = rendered.into_inner();
    Ok(PrewarmSummary {
        rendered,
        already_cached: jobs.len() - rendered,
    })
}

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub text: String,
    pub partial_records_skipped: usize,
}

/// Builds the report from a log directory (or a log file) alone.
pub fn report(log: &Path, format: ReportFormat, instruments: Option<&Path>) -> Result<ReportOutput, CliError> {
    let path = if log.is_dir() { log.join(LOG_FILE) } else { log.to_path_buf() };
    if !path.exists() {
        return Err(CliError::io(&path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let battery = match instruments {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let b = Battery::from_toml_str(&text).map_err(|e| CliError::validation(e.to_string()))?;
            b.check().map_err(|e| CliError::validation(e.to_string()))?;
            b
        }
        None => Battery::standard(),
    };
    let contents = read_log(&path)?;
    if contents.records.is_empty() {
        return Err(CliError::new(crate::ExitKind::NoData, "no data"));
    }
    let state = ExperimentState::replay(&contents.records);
    let report = build_report(&state, &battery)?;
    Ok(ReportOutput {
        text: report.render(format),
        partial_records_skipped: contents.partial_records_skipped,
    })
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub config: PathBuf,
    pub workers: usize,
    pub profile: PathBuf,
    /// Directory for `trace.jsonl` and `report.txt`.
    pub out: Option<PathBuf>,
    /// Overrides the config's log root (embedded mode).
    pub log_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    /// Base URL of a running server; embedded when unset.
    pub server: Option<String>,
    pub admin_token: Option<String>,
    /// Real-time compression factor for remote runs.
    pub speedup: u64,
}

#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub outcome: SimOutcome,
    /// Event log written by the embedded server.
    pub log_file: Option<PathBuf>,
}

/// Runs scripted workers against an embedded or remote server.
///
/// Embedded runs refuse to append to an existing log so that a fixed seed
/// always reproduces the same file; point `log_dir` somewhere fresh.
pub async fn simulate(opts: &SimulateOptions) -> Result<SimulateSummary, CliError> {
    if opts.workers == 0 {
        return Err(CliError::validation("--workers must be at least 1"));
    }
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(d) = &opts.log_dir {
        cfg.log_dir = d.clone();
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    let profile = AccuracyProfile::load(&opts.profile)?;
    let settings = |admin: String| SimSettings {
        workers: opts.workers,
        seed: cfg.seed,
        stages: cfg.stages.clone(),
        experiment_id: cfg.experiment_id.clone(),
        admin_token: admin,
    };

    let (outcome, log_file) = match &opts.server {
        Some(url) => {
            let admin = opts
                .admin_token
                .clone()
                .or_else(|| cfg.admin_token.clone())
                .ok_or_else(|| CliError::validation("remote simulation needs --admin-token or admin_token in the config"))?;
            let corpus = Corpus::ingest_manifest(&cfg.manifest_path())?;
            let battery = load_battery(&cfg)?;
            let transport = Remote::new(url, opts.speedup);
            let outcome = run_simulation(&transport, &corpus, &battery, &profile, &settings(admin)).await?;
            (outcome, None)
        }
        None => {
            let log_file = cfg.log_file();
            if std::fs::metadata(&log_file).is_ok_and(|m| m.len() > 0) {
                return Err(CliError::validation(format!(
                    "{} already has records; simulation needs a fresh log (see --log-dir)",
                    log_file.display()
                )));
            }
            let admin = cfg.admin_token.get_or_insert_with(|| format!("sim-admin-{}", cfg.seed)).clone();
            let clock = Arc::new(ManualClock::new(SIM_EPOCH_MS));
            let options = ServerOptions {
                clock: clock.clone(),
                tokens: Arc::new(SeededTokens::new(cfg.seed ^ 0x746f_6b65_6e73)),
            };
            let (app, _) = AppState::open(cfg.clone(), options)?;
            let transport = Embedded::new(&app, clock);
            let outcome = run_simulation(&transport, app.corpus(), app.battery(), &profile, &settings(admin)).await?;
            (outcome, Some(log_file))
        }
    };

    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
        write_trace(&out.join("trace.jsonl"), &outcome.trace)?;
        let report_path = out.join("report.txt");
        std::fs::write(&report_path, &outcome.live_report).map_err(|e| CliError::io(&report_path, e))?;
    }
    Ok(SimulateSummary { outcome, log_file })
}

/// Runs the HTTP server until interrupted.
pub async fn serve(config: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let listen = cfg.listen.clone();
    let (app, summary) = AppState::open(cfg, ServerOptions::default())?;
    tracing::info!(
        records = summary.records_replayed,
        partial_skipped = summary.partial_records_skipped,
        "event log replayed"
    );
    let listener = tokio::net::TcpListener::bind(&listen)
        .await
        .map_err(|e| CliError::other(format!("binding {listen}: {e}")))?;
    tracing::info!(address = %listen, "listening");
    veilmod_server::serve(app, listener)
        .await
        .map_err(|e| CliError::other(format!("server: {e}")))
}
