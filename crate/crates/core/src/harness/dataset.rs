//! Line-delimited JSON datasets.
//!
//! Pairwise records:
//! `{"scenario_id", "scenario", "outcome1", "outcome2", "condition1", "condition2", "gold"}`
//! with `gold` one of `Context1`, `Context2`, `Same`.
//!
//! Decision records:
//! `{"scenario_id", "scenario", "outcome1", "outcome2", "condition", "gold"}`
//! with `gold` one of `O1`, `O2`. `scenario` may be empty.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::{Condition, Scenario};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairwiseGold {
    Context1,
    Context2,
    Same,
}

impl PairwiseGold {
    pub const ALL: [PairwiseGold; 3] = [PairwiseGold::Context1, PairwiseGold::Context2, PairwiseGold::Same];
}

impl fmt::Display for PairwiseGold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DecisionGold {
    O1,
    O2,
}

impl DecisionGold {
    pub const ALL: [DecisionGold; 2] = [DecisionGold::O1, DecisionGold::O2];
}

impl fmt::Display for DecisionGold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseInstance {
    pub scenario: Scenario,
    pub condition1: Condition,
    pub condition2: Condition,
    pub gold: PairwiseGold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionInstance {
    pub scenario: Scenario,
    pub condition: Condition,
    pub gold: DecisionGold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Pairwise,
    Decision,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    Pairwise(Vec<PairwiseInstance>),
    Decision(Vec<DecisionInstance>),
}

impl Dataset {
    pub fn kind(&self) -> DatasetKind {
        match self {
            Dataset::Pairwise(_) => DatasetKind::Pairwise,
            Dataset::Decision(_) => DatasetKind::Decision,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::Pairwise(v) => v.len(),
            Dataset::Decision(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct scenarios in order of first appearance.
    pub fn scenarios(&self) -> Vec<Scenario> {
        let all: Vec<&Scenario> = match self {
            Dataset::Pairwise(v) => v.iter().map(|i| &i.scenario).collect(),
            Dataset::Decision(v) => v.iter().map(|i| &i.scenario).collect(),
        };
        let mut seen = std::collections::HashSet::new();
        all.into_iter()
            .filter(|s| seen.insert(s.id.clone()))
            .cloned()
            .collect()
    }

    /// Distinct conditions of one scenario, keyed by id.
    pub fn conditions(&self, scenario_id: &str) -> BTreeMap<String, Condition> {
        let all: Vec<&Condition> = match self {
            Dataset::Pairwise(v) => v
                .iter()
                .filter(|i| i.scenario.id == scenario_id)
                .flat_map(|i| [&i.condition1, &i.condition2])
                .collect(),
            Dataset::Decision(v) => v
                .iter()
                .filter(|i| i.scenario.id == scenario_id)
                .map(|i| &i.condition)
                .collect(),
        };
        all.into_iter().map(|c| (c.id.clone(), c.clone())).collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairwiseRecord {
    scenario_id: String,
    #[serde(default)]
    scenario: String,
    outcome1: String,
    outcome2: String,
    condition1: String,
    condition2: String,
    gold: PairwiseGold,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionRecord {
    scenario_id: String,
    #[serde(default)]
    scenario: String,
    outcome1: String,
    outcome2: String,
    condition: String,
    gold: DecisionGold,
}

fn read_records<R: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, R)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push((i + 1, record));
    }
    if records.is_empty() {
        log::warn!("{}: no records", path.display());
    }
    Ok(records)
}

/// Keeps one `Scenario` per id and rejects records that redefine it.
struct ScenarioTable<'a> {
    path: &'a Path,
    known: BTreeMap<String, Scenario>,
}

impl ScenarioTable<'_> {
    fn resolve(&mut self, line: usize, scenario: Scenario) -> Result<Scenario> {
        let schema = |message: String| Error::Schema {
            path: self.path.to_path_buf(),
            line,
            message,
        };
        scenario.validate().map_err(|e| schema(e.to_string()))?;
        match self.known.get(&scenario.id) {
            Some(known) if *known != scenario => Err(schema(format!(
                "scenario {} redefined with different text",
                scenario.id
            ))),
            Some(known) => Ok(known.clone()),
            None => {
                self.known.insert(scenario.id.clone(), scenario.clone());
                Ok(scenario)
            }
        }
    }

    fn condition(&self, line: usize, text: &str, scenario_id: &str) -> Result<Condition> {
        Condition::new(text, scenario_id).map_err(|e| Error::Schema {
            path: self.path.to_path_buf(),
            line,
            message: e.to_string(),
        })
    }
}

pub fn load_pairwise(path: &Path) -> Result<Vec<PairwiseInstance>> {
    let mut table = ScenarioTable {
        path,
        known: BTreeMap::new(),
    };
    read_records::<PairwiseRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let scenario = table.resolve(
                line,
                Scenario {
                    id: r.scenario_id,
                    description: r.scenario,
                    outcome1: r.outcome1,
                    outcome2: r.outcome2,
                },
            )?;
            Ok(PairwiseInstance {
                condition1: table.condition(line, &r.condition1, &scenario.id)?,
                condition2: table.condition(line, &r.condition2, &scenario.id)?,
                gold: r.gold,
                scenario,
            })
        })
        .collect()
}

pub fn load_decision(path: &Path) -> Result<Vec<DecisionInstance>> {
    let mut table = ScenarioTable {
        path,
        known: BTreeMap::new(),
    };
    read_records::<DecisionRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            let scenario = table.resolve(
                line,
                Scenario {
                    id: r.scenario_id,
                    description: r.scenario,
                    outcome1: r.outcome1,
                    outcome2: r.outcome2,
                },
            )?;
            Ok(DecisionInstance {
                condition: table.condition(line, &r.condition, &scenario.id)?,
                gold: r.gold,
                scenario,
            })
        })
        .collect()
}

pub fn load_dataset(path: &Path, kind: DatasetKind) -> Result<Dataset> {
    Ok(match kind {
        DatasetKind::Pairwise => Dataset::Pairwise(load_pairwise(path)?),
        DatasetKind::Decision => Dataset::Decision(load_decision(path)?),
    })
}
