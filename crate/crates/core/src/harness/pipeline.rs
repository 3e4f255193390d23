//! End-to-end runs over a dataset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abduction::{build_factor_pool, AbductionState, StopReason};
use crate::config::PipelineConfig;
use crate::domain::{validate_factor_space, FactorSpace, Scenario, SpaceDocument};
use crate::error::{Error, Result};
use crate::gateway::{CostLedger, Gateway};
use crate::harness::dataset::Dataset;
use crate::harness::metrics::{
    classify_pairwise, evaluate_decision, evaluate_pairwise, DecisionMode, MetricsReport,
};
use crate::inference::{infer, PosteriorReport};
use crate::mapping::{map_condition, MappingResult};

/// Serialises every file write of a run.
#[derive(Debug, Default)]
pub struct Writer {
    lock: Mutex<()>,
}

impl Writer {
    pub fn write(&self, path: &Path, contents: &str) -> Result<()> {
        let _guard = self.lock.lock().expect("writer lock");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        self.write(path, &(serde_json::to_string_pretty(value)? + "\n"))
    }

    pub fn write_jsonl<T: Serialize>(&self, path: &Path, values: &[T]) -> Result<()> {
        let mut text = String::new();
        for v in values {
            text.push_str(&serde_json::to_string(v)?);
            text.push('\n');
        }
        self.write(path, &text)
    }
}

/// Factor spaces on disk, keyed by scenario id and the space-relevant part
/// of the configuration.
#[derive(Debug)]
pub struct SpaceCache<'w> {
    dir: PathBuf,
    writer: &'w Writer,
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl<'w> SpaceCache<'w> {
    pub fn new(dir: impl Into<PathBuf>, writer: &'w Writer) -> Self {
        SpaceCache {
            dir: dir.into(),
            writer,
        }
    }

    pub fn path(&self, scenario_id: &str, digest: &str) -> PathBuf {
        self.dir.join(format!("{}.{digest}.json", file_stem(scenario_id)))
    }

    pub fn load(&self, scenario: &Scenario, digest: &str) -> Option<SpaceDocument> {
        let path = self.path(&scenario.id, digest);
        if !path.exists() {
            return None;
        }
        match SpaceDocument::load(&path) {
            Ok(doc) if doc.scenario == *scenario => Some(doc),
            Ok(_) => {
                log::warn!("{}: cached space belongs to another scenario", path.display());
                None
            }
            Err(e) => {
                log::warn!("ignoring unreadable cache entry: {e}");
                None
            }
        }
    }

    pub fn store(&self, doc: &SpaceDocument, digest: &str) -> Result<()> {
        self.writer.write(&self.path(&doc.scenario.id, digest), &doc.to_json()?)
    }
}

/// Runs generation and structuring for one scenario.
pub fn build_space(gateway: &Gateway, scenario: &Scenario, config: &PipelineConfig) -> Result<SpaceDocument> {
    let state = build_factor_pool(gateway, scenario, config)?;
    let space = crate::structuring::build_hierarchy(gateway, &scenario.id, &state, config)?;
    let problems = validate_factor_space(&space);
    if !problems.is_empty() {
        return Err(Error::Backend(format!("malformed factor space: {}", problems.join("; "))));
    }
    Ok(SpaceDocument::new(scenario.clone(), space, state.pool))
}

/// Cached space if present, else a fresh build that is then cached.
/// The flag reports a cache hit.
pub fn load_or_build_space(
    gateway: &Gateway,
    scenario: &Scenario,
    config: &PipelineConfig,
    cache: Option<&SpaceCache>,
) -> Result<(SpaceDocument, bool)> {
    let digest = config.space_digest();
    if let Some(doc) = cache.and_then(|c| c.load(scenario, &digest)) {
        return Ok((doc, true));
    }
    let doc = build_space(gateway, scenario, config)?;
    if let Some(cache) = cache {
        cache.store(&doc, &digest)?;
    }
    Ok((doc, false))
}

/// Mapping and inference for every condition of `scenario` in `dataset`.
pub fn evaluate_space(
    gateway: &Gateway,
    dataset: &Dataset,
    scenario: &Scenario,
    space: &FactorSpace,
    config: &PipelineConfig,
) -> Result<Vec<(MappingResult, PosteriorReport)>> {
    dataset
        .conditions(&scenario.id)
        .values()
        .map(|condition| {
            if space.is_empty() {
                return Ok((
                    MappingResult {
                        condition_id: condition.id.clone(),
                        candidates: Default::default(),
                        votes: Default::default(),
                        voted: Default::default(),
                        final_set: Default::default(),
                        abstained: true,
                        seed: config.mapping.seed,
                    },
                    PosteriorReport::unknown(&condition.id),
                ));
            }
            let mapping = map_condition(gateway, space, scenario, condition, config)?;
            let report = infer(gateway, scenario, space, &mapping, config)?;
            Ok((mapping, report))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario: Scenario,
    pub cache_hit: bool,
    pub factors: usize,
    pub clusters: usize,
    pub mappings: Vec<MappingResult>,
    pub reports: Vec<PosteriorReport>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFailure {
    pub scenario_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub scenario_id: String,
    pub gold: String,
    pub prediction: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSummary {
    pub ledger: CostLedger,
    pub elapsed_secs: f64,
    pub scenarios: usize,
}

impl CostSummary {
    pub fn tokens_per_scenario(&self) -> f64 {
        self.ledger.total_tokens() as f64 / self.scenarios.max(1) as f64
    }

    pub fn secs_per_scenario(&self) -> f64 {
        self.elapsed_secs / self.scenarios.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub metrics: MetricsReport,
    pub failures: Vec<ScenarioFailure>,
    pub instances: Vec<InstanceResult>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub cache_dir: Option<PathBuf>,
    /// Where reports are written, if anywhere.
    pub out_dir: Option<PathBuf>,
    /// Scenarios processed at once.
    pub workers: usize,
    pub decision_mode: DecisionMode,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            cache_dir: None,
            out_dir: None,
            workers: 4,
            decision_mode: DecisionMode::Argmax,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub cost: CostSummary,
    pub scenarios: Vec<ScenarioOutcome>,
}

fn score_dataset(
    dataset: &Dataset,
    reports: &BTreeMap<(String, String), PosteriorReport>,
    config: &PipelineConfig,
    mode: DecisionMode,
) -> Result<(MetricsReport, Vec<InstanceResult>)> {
    match dataset {
        Dataset::Pairwise(instances) => {
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            let mut rows = Vec::new();
            for inst in instances {
                let key = |c: &crate::domain::Condition| (inst.scenario.id.clone(), c.id.clone());
                let (Some(r1), Some(r2)) = (reports.get(&key(&inst.condition1)), reports.get(&key(&inst.condition2)))
                else {
                    continue;
                };
                let pred = classify_pairwise(r1, r2, config.decision.eps_same);
                rows.push(InstanceResult {
                    scenario_id: inst.scenario.id.clone(),
                    gold: inst.gold.to_string(),
                    prediction: pred.to_string(),
                });
                preds.push(pred);
                golds.push(inst.gold);
            }
            Ok((evaluate_pairwise(&preds, &golds)?, rows))
        }
        Dataset::Decision(instances) => {
            let mut picked = Vec::new();
            let mut golds = Vec::new();
            let mut rows = Vec::new();
            for inst in instances {
                let Some(r) = reports.get(&(inst.scenario.id.clone(), inst.condition.id.clone())) else {
                    continue;
                };
                rows.push(InstanceResult {
                    scenario_id: inst.scenario.id.clone(),
                    gold: inst.gold.to_string(),
                    prediction: format!("{:?}", r.decision),
                });
                picked.push(r.clone());
                golds.push(inst.gold);
            }
            let metrics = evaluate_decision(&picked, &golds, config.decision.tau_dec, mode)?;
            Ok((metrics, rows))
        }
    }
}

/// Builds or loads every scenario's space, maps and scores every condition,
/// and writes the reports when `options.out_dir` is set. A failing scenario
/// is recorded and its instances left out; only fatal errors abort.
pub fn run_pipeline(
    gateway: &Gateway,
    dataset: &Dataset,
    config: &PipelineConfig,
    options: &RunOptions,
) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    let before = gateway.ledger();
    let writer = Writer::default();
    let cache = options.cache_dir.as_ref().map(|d| SpaceCache::new(d, &writer));

    let scenarios = dataset.scenarios();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.max(1))
        .build()
        .map_err(|e| Error::Backend(e.to_string()))?;
    let results: Vec<Result<ScenarioOutcome>> = pool.install(|| {
        scenarios
            .par_iter()
            .map(|scenario| {
                let (doc, cache_hit) = load_or_build_space(gateway, scenario, config, cache.as_ref())?;
                if doc.space.is_empty() {
                    return Err(Error::precondition(format!("scenario {} produced no factors", scenario.id)));
                }
                let pairs = evaluate_space(gateway, dataset, scenario, &doc.space, config)?;
                let (mappings, reports) = pairs.into_iter().unzip();
                Ok(ScenarioOutcome {
                    scenario: scenario.clone(),
                    cache_hit,
                    factors: doc.space.factors.len(),
                    clusters: doc.space.clusters.len(),
                    mappings,
                    reports,
                })
            })
            .collect()
    });

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (scenario, result) in scenarios.iter().zip(results) {
        match result {
            Ok(o) => outcomes.push(o),
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => {
                log::warn!("scenario {} failed: {e}", scenario.id);
                failures.push(ScenarioFailure {
                    scenario_id: scenario.id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let reports: BTreeMap<(String, String), PosteriorReport> = outcomes
        .iter()
        .flat_map(|o| {
            o.reports
                .iter()
                .map(move |r| ((o.scenario.id.clone(), r.condition_id.clone()), r.clone()))
        })
        .collect();
    let (metrics, instances) = score_dataset(dataset, &reports, config, options.decision_mode)?;
    let report = RunReport {
        config_digest: config.digest(),
        metrics,
        failures,
        instances,
    };
    let cost = CostSummary {
        ledger: gateway.ledger().since(&before),
        elapsed_secs: started.elapsed().as_secs_f64(),
        scenarios: scenarios.len(),
    };

    if let Some(dir) = &options.out_dir {
        write_run(&writer, dir, &report, &cost, &outcomes)?;
    }
    Ok(RunOutcome {
        report,
        cost,
        scenarios: outcomes,
    })
}

pub const METRICS_FILE: &str = "metrics.json";
pub const COST_FILE: &str = "cost.json";

fn write_run(
    writer: &Writer,
    dir: &Path,
    report: &RunReport,
    cost: &CostSummary,
    outcomes: &[ScenarioOutcome],
) -> Result<()> {
    writer.write_json(&dir.join(METRICS_FILE), report)?;
    writer.write(&dir.join("metrics.txt"), &super::report::metrics_table(&report.metrics))?;
    writer.write_json(&dir.join(COST_FILE), cost)?;
    let mappings: Vec<&MappingResult> = outcomes.iter().flat_map(|o| &o.mappings).collect();
    writer.write_jsonl(&dir.join("mappings.jsonl"), &mappings)?;
    let reports: Vec<&PosteriorReport> = outcomes.iter().flat_map(|o| &o.reports).collect();
    writer.write_jsonl(&dir.join("reports.jsonl"), &reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_factors: usize,
    pub unknown_rate: f64,
    pub micro_f1: f64,
}

/// Re-runs structuring, mapping and inference on the first `n` generated
/// factors of each scenario, for every `n` in `factor_counts`.
pub fn unknown_rate_curve(
    gateway: &Gateway,
    dataset: &Dataset,
    config: &PipelineConfig,
    factor_counts: &[usize],
    cache_dir: Option<&Path>,
) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    if factor_counts.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::precondition("factor counts must be ascending"));
    }
    let writer = Writer::default();
    let cache = cache_dir.map(|d| SpaceCache::new(d, &writer));
    let docs: Vec<SpaceDocument> = dataset
        .scenarios()
        .iter()
        .map(|s| Ok(load_or_build_space(gateway, s, config, cache.as_ref())?.0))
        .collect::<Result<_>>()?;

    let mut points = Vec::with_capacity(factor_counts.len());
    for &n in factor_counts {
        let mut reports = BTreeMap::new();
        for doc in &docs {
            let state = AbductionState {
                round: doc.space.stats.rounds_used,
                pool: doc.pool.clone(),
                stopped_reason: StopReason::TargetReached,
                pool_sizes: Vec::new(),
                tallies: BTreeMap::new(),
            }
            .truncated(n);
            let space = crate::structuring::build_hierarchy(gateway, &doc.scenario.id, &state, config)?;
            for (_, r) in evaluate_space(gateway, dataset, &doc.scenario, &space, config)? {
                reports.insert((doc.scenario.id.clone(), r.condition_id.clone()), r);
            }
        }
        let (metrics, _) = score_dataset(dataset, &reports, config, DecisionMode::Argmax)?;
        points.push(CurvePoint {
            n_factors: n,
            unknown_rate: metrics.unknown_rate,
            micro_f1: metrics.micro_avg_f1,
        });
    }
    Ok(points)
}
