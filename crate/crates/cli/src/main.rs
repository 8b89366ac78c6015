use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use veilmod_cli::commands::{self, SimulateOptions};
use veilmod_cli::CliError;
use veilmod_core::report::ReportFormat;

#[derive(Parser)]
#[command(name = "veilmod", version, about = "Obfuscated image-moderation experiment tooling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest and write a corpus directory.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute blurred renditions into the cache.
    Prewarm {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated sigmas, e.g. 7,14.
        #[arg(long, allow_hyphen_values = true)]
        sigmas: String,
        /// Extra slider levels, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        levels: Option<String>,
        /// Cache directory (default: <corpus>/cache).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = 90)]
        quality: u8,
    },
    /// Run the HTTP task server.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Drive scripted workers through the experiment.
    Simulate {
        /// Experiment config file.
        #[arg(long, alias = "config")]
        experiment: PathBuf,
        #[arg(long)]
        workers: usize,
        #[arg(long, alias = "profile")]
        accuracy_profile: PathBuf,
        /// Where to write trace.jsonl and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's log root.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Base URL of a running server; an embedded server is used otherwise.
        #[arg(long)]
        server: Option<String>,
        #[arg(long)]
        admin_token: Option<String>,
        /// Time compression for remote runs.
        #[arg(long, default_value_t = 100)]
        speedup: u64,
    },
    /// Build the report from an event log.
    Report {
        /// Experiment log directory or events.jsonl file.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
        /// Instrument definition file (default: built-in battery).
        #[arg(long)]
        instruments: Option<PathBuf>,
    },
    /// Write the placeholder corpus.
    Fixture {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the built-in survey instrument definitions.
    Instruments {
        #[arg(long)]
        out: PathBuf,
    },
}

async fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { manifest, out } => {
            let table = commands::ingest(&manifest, &out)?;
            print!("{table}");
        }
        Command::Prewarm {
            corpus,
            sigmas,
            levels,
            cache,
            quality,
        } => {
            let mut all = commands::parse_sigmas(&sigmas)?;
            if let Some(l) = levels {
                all.extend(commands::parse_sigmas(&l)?);
            }
            let s = commands::prewarm(&corpus, cache.as_deref(), &all, quality)?;
            println!("rendered {} rendition(s), {} already cached", s.rendered, s.already_cached);
        }
        Command::Serve { config } => commands::serve(&config).await?,
        Command::Simulate {
            experiment,
            workers,
            accuracy_profile,
            out,
            log_dir,
            seed,
            server,
            admin_token,
            speedup,
        } => {
            let summary = commands::simulate(&SimulateOptions {
                config: experiment,
                workers,
                profile: accuracy_profile,
                out,
                log_dir,
                seed,
                server,
                admin_token,
                speedup,
            })
            .await?;
            let responses: usize = summary.outcome.workers.iter().map(|w| w.responses).sum();
            eprintln!(
                "simulated {} worker(s), {} response(s){}",
                summary.outcome.workers.len(),
                responses,
                summary
                    .log_file
                    .map(|p| format!(", log {}", p.display()))
                    .unwrap_or_default()
            );
            print!("{}", summary.outcome.live_report);
        }
        Command::Report {
            log,
            format,
            instruments,
        } => {
            let format: ReportFormat = format.parse().map_err(CliError::validation)?;
            let out = commands::report(&log, format, instruments.as_deref())?;
            if out.partial_records_skipped > 0 {
                let n = out.partial_records_skipped;
                eprintln!("warning: {n} partial record{} skipped", if n == 1 { "" } else { "s" });
            }
            print!("{}", out.text);
        }
        Command::Fixture { out } => {
            let table = commands::fixture(&out)?;
            print!("{table}");
        }
        Command::Instruments { out } => commands::instruments(&out)?,
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
