use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use sieve_core::gateway::sim::SimulationRule;
use sieve_core::harness::corpus::CorpusSpec;
use sieve_core::harness::experiment::{run_experiment, Condition, CorpusSource, ExperimentConfig, Stage};
use sieve_core::store::{FilterExport, Store};
use sieve_server::ingest::FixtureAdapter;
use sieve_server::{scheduler, ServiceConfig};

#[derive(Parser)]
#[command(name = "sieve", version, about = "Personal comment filters that learn from your labels")]
struct Cli {
    /// Service config (TOML). Defaults apply when omitted.
    #[arg(long, global = true, env = "SIEVE_CONFIG")]
    config: Option<PathBuf>,
    /// Database path; overrides the config.
    #[arg(long, global = true)]
    db: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Load a JSONL comment file into the store.
    Ingest {
        #[arg(long)]
        source: PathBuf,
        /// Treat the file as a polled source: keep a high-water mark and
        /// take at most 1000 comments on the first sync.
        #[arg(long)]
        poll: bool,
    },
    /// Compare optimization conditions on a labeled corpus.
    Experiment {
        /// A JSONL file, or "synthetic".
        #[arg(long, default_value = "synthetic")]
        corpus: String,
        #[arg(long, value_delimiter = ',', default_value = "promptimizer,protegi")]
        conditions: Vec<Condition>,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Synthetic corpus size.
        #[arg(long, default_value_t = 200)]
        n: usize,
        /// Hidden rule: keywords to catch.
        #[arg(long, value_delimiter = ',', default_value = "casino,crypto,giveaway")]
        positive: Vec<String>,
        /// Hidden rule: keywords that exempt a comment.
        #[arg(long, value_delimiter = ',', default_value = "charity")]
        negative: Vec<String>,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        /// Report path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a filter's versions and labels as JSON.
    ExportFilter {
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a filter written by export-filter.
    ImportFilter {
        #[arg(long = "in")]
        input: PathBuf,
        /// Store under a different filter id.
        #[arg(long)]
        as_id: Option<String>,
    },
    /// Drop cached predictions no stored version uses, then vacuum.
    Compact {
        /// Keep only entries for each filter's latest version.
        #[arg(long)]
        latest_only: bool,
    },
}

fn service_config(cli: &Cli) -> Result<ServiceConfig> {
    let mut config = match &cli.config {
        Some(path) => ServiceConfig::load(path).map_err(anyhow::Error::msg)?,
        None => ServiceConfig::default(),
    };
    if let Some(db) = &cli.db {
        config.db = db.clone();
    }
    Ok(config)
}

fn open_store(config: &ServiceConfig) -> Result<Store> {
    Store::open(&config.db).with_context(|| format!("opening {}", config.db.display()))
}

fn write_out(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let mut config = service_config(&cli)?;
    match cli.command {
        Command::Serve { port, bind } => {
            if let Some(p) = port {
                config.port = p;
            }
            if let Some(b) = bind {
                config.bind = b;
            }
            sieve_server::serve(config).await.map_err(anyhow::Error::msg)?;
        }
        Command::Ingest { source, poll } => {
            let service = sieve_server::build_service(&config).map_err(anyhow::Error::msg)?;
            let report = if poll {
                let adapter = FixtureAdapter::new(source.display().to_string(), &source);
                scheduler::poll_once(&service, &adapter).await
            } else {
                scheduler::ingest_file(&service, &sieve_server::ingest::SourceConfig::Jsonl { path: source }).await
            }
            .map_err(|e| anyhow::anyhow!("{e}"))?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Experiment {
            corpus,
            conditions,
            iterations,
            seed,
            n,
            positive,
            negative,
            noise,
            out,
        } => {
            if conditions.is_empty() {
                bail!("no conditions given");
            }
            let corpus = match corpus.as_str() {
                "synthetic" => CorpusSource::Synthetic(CorpusSpec {
                    n,
                    ..CorpusSpec::default()
                }),
                path => CorpusSource::File { path: path.into() },
            };
            let exp = ExperimentConfig {
                corpus,
                rule: SimulationRule::new(positive, negative, noise, seed).map_err(anyhow::Error::msg)?,
                conditions,
                iterations,
                seed,
                eval_seed: config.eval_seed,
                ..ExperimentConfig::default()
            };
            let report = run_experiment(&exp).await?;
            for c in &report.conditions {
                let f1 = |s| c.stage(s).map(|m| format!("{:.3}", m.f1)).unwrap_or_else(|| "-".into());
                eprintln!(
                    "{:<13} test F1 draft {} post-init {} post-iterations {}",
                    c.condition.as_str(),
                    f1(Stage::Draft),
                    f1(Stage::PostInit),
                    f1(Stage::PostIterations)
                );
            }
            write_out(out.as_deref(), &report.to_json())?;
            if report.partial {
                bail!("experiment stopped early: {}", report.error.as_deref().unwrap_or("unknown error"));
            }
        }
        Command::ExportFilter { id, out } => {
            let doc = open_store(&config)?.export_filter(&id)?;
            write_out(out.as_deref(), &serde_json::to_string_pretty(&doc)?)?;
        }
        Command::ImportFilter { input, as_id } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let doc: FilterExport = serde_json::from_str(&text).context("parsing export")?;
            let id = open_store(&config)?.import_filter(&doc, as_id.as_deref())?;
            println!("imported {id}");
        }
        Command::Compact { latest_only } => {
            let r = open_store(&config)?.compact(latest_only)?;
            println!(
                "removed {} predictions and {} explanations",
                r.predictions_removed, r.explanations_removed
            );
        }
    }
    Ok(())
}
