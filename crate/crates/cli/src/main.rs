use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anchor_core::gateway::{Gateway, GatewayOptions};
use anchor_core::harness::dataset::{load_dataset, DatasetKind};
use anchor_core::harness::metrics::DecisionMode;
use anchor_core::harness::pipeline::{
    load_or_build_space, run_pipeline, unknown_rate_curve, CostSummary, RunOptions, SpaceCache, Writer, COST_FILE,
};
use anchor_core::harness::report::{cost_table, curve_table, metrics_table};
use anchor_core::inference::infer;
use anchor_core::mapping::map_condition;
use anchor_core::{Condition, Error, MappingResult, PipelineConfig, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "anchor", version, about = "Factor-space reasoning over binary-outcome scenarios")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or load from cache) the factor space of every scenario in a dataset.
    BuildSpace {
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Pairwise)]
        kind: Kind,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Directory for the space documents.
        #[arg(long, default_value = "spaces")]
        out: PathBuf,
    },
    /// Map conditions (one per line) onto a factor space.
    Map {
        space: PathBuf,
        conditions: PathBuf,
        /// Write JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior reports for mapped conditions.
    Infer {
        space: PathBuf,
        mappings: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline over a dataset and score it.
    Eval {
        #[arg(value_enum)]
        kind: Kind,
        dataset: PathBuf,
        /// Score decisions by thresholding P(O1) at this value instead of argmax.
        #[arg(long)]
        tau_dec: Option<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Unknown rate and micro F1 as the factor pool grows.
    Curve {
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        counts: Vec<usize>,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise the cost of a finished run.
    CostReport {
        run_dir: PathBuf,
        /// Another run to compare against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory for metrics, cost and per-condition reports.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Scenarios processed at once.
    #[arg(long, default_value_t = 4)]
    workers: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Pairwise,
    Decision,
}

impl From<Kind> for DatasetKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Pairwise => DatasetKind::Pairwise,
            Kind::Decision => DatasetKind::Decision,
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn gateway(config: &PipelineConfig) -> Result<Gateway> {
    let providers = anchor_http::providers_from_env()?;
    let options = GatewayOptions::from_config(config)?;
    let gw = Gateway::new(providers.chat, providers.embed, options);
    log::info!("{}", gw.describe());
    Ok(gw)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn emit_jsonl<T: serde::Serialize>(values: &[T], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => Writer::default().write_jsonl(path, values),
        None => {
            for v in values {
                println!("{}", serde_json::to_string(v)?);
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let started = Instant::now();
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::BuildSpace {
            dataset,
            kind,
            cache_dir,
            out,
        } => {
            let data = load_dataset(&dataset, kind.into())?;
            let gw = gateway(&config)?;
            let writer = Writer::default();
            let cache = cache_dir.as_ref().map(|d| SpaceCache::new(d, &writer));
            for scenario in data.scenarios() {
                let (doc, hit) = load_or_build_space(&gw, &scenario, &config, cache.as_ref())?;
                let path = out.join(format!("{}.json", scenario.id));
                doc.save(&path)?;
                println!(
                    "{}: {} factors, {} clusters, {} unclustered{} -> {}",
                    scenario.id,
                    doc.space.factors.len(),
                    doc.space.clusters.len(),
                    doc.space.unclustered.len(),
                    if hit { " (cached)" } else { "" },
                    path.display()
                );
            }
            let cost = CostSummary {
                ledger: gw.ledger(),
                elapsed_secs: started.elapsed().as_secs_f64(),
                scenarios: data.scenarios().len(),
            };
            eprint!("{}", cost_table(&cost, None));
        }
        Command::Map { space, conditions, out } => {
            let doc = anchor_core::domain::SpaceDocument::load(&space)?;
            let text = std::fs::read_to_string(&conditions).map_err(|e| io(&conditions, e))?;
            let gw = gateway(&config)?;
            let mut results: Vec<MappingResult> = Vec::new();
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let condition = Condition::new(line, &doc.scenario.id)?;
                results.push(map_condition(&gw, &doc.space, &doc.scenario, &condition, &config)?);
            }
            emit_jsonl(&results, out.as_deref())?;
        }
        Command::Infer { space, mappings, out } => {
            let doc = anchor_core::domain::SpaceDocument::load(&space)?;
            let mappings: Vec<MappingResult> = read_jsonl(&mappings)?;
            let gw = gateway(&config)?;
            let reports = mappings
                .iter()
                .map(|m| infer(&gw, &doc.scenario, &doc.space, m, &config))
                .collect::<Result<Vec<_>>>()?;
            emit_jsonl(&reports, out.as_deref())?;
        }
        Command::Eval {
            kind,
            dataset,
            tau_dec,
            run,
        } => {
            let mut config = config;
            let mode = match tau_dec {
                Some(t) => {
                    config.decision.tau_dec = t;
                    config.validate()?;
                    DecisionMode::Threshold
                }
                None => DecisionMode::Argmax,
            };
            let data = load_dataset(&dataset, kind.into())?;
            let gw = gateway(&config)?;
            let options = RunOptions {
                cache_dir: run.cache_dir,
                out_dir: Some(run.out.clone()),
                workers: run.workers,
                decision_mode: mode,
            };
            let outcome = run_pipeline(&gw, &data, &config, &options)?;
            print!("{}", metrics_table(&outcome.report.metrics));
            for f in &outcome.report.failures {
                println!("failed scenario {}: {}", f.scenario_id, f.error);
            }
            println!("reports written to {}", run.out.display());
        }
        Command::Curve {
            dataset,
            counts,
            cache_dir,
            out,
        } => {
            let data = load_dataset(&dataset, DatasetKind::Pairwise)?;
            let gw = gateway(&config)?;
            let points = unknown_rate_curve(&gw, &data, &config, &counts, cache_dir.as_deref())?;
            print!("{}", curve_table(&points));
            if let Some(path) = out {
                Writer::default().write_json(&path, &points)?;
            }
        }
        Command::CostReport { run_dir, baseline } => {
            let cost: CostSummary = read_json(&run_dir.join(COST_FILE))?;
            let base: Option<CostSummary> = baseline.map(|b| read_json(&b.join(COST_FILE))).transpose()?;
            print!("{}", cost_table(&cost, base.as_ref()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
