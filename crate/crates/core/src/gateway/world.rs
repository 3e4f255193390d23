//! A scripted stand-in for the chat model.
//!
//! The world is a JSON document listing, per scenario, the factors a model
//! would discover (with labels, votes, probabilities, themes and latent
//! groups) and the conditions it would be asked about (with the factors it
//! would judge relevant). Every answer is a pure function of the request, so
//! runs against a world are reproducible and can be recorded as fixtures.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;
use serde_json::{json, Value};

use super::extract::json_values;
use super::{ChatProvider, ChatRequest, ChatResponse, GatewayError, PromptTag};
use crate::domain::normalize_text;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFactor {
    pub text: String,
    /// `Outcome1`, `Outcome2` or `Both`.
    pub label: String,
    /// Per-sample label answers, cycled; overrides `label` when present.
    /// Anything that is not a label makes that sample unparseable.
    #[serde(default)]
    pub votes: Vec<String>,
    #[serde(default)]
    pub phi: Option<f64>,
    #[serde(default)]
    pub theme: Option<String>,
    #[serde(default)]
    pub latent: Option<String>,
    /// Dropped when its cluster is pruned for redundancy.
    #[serde(default)]
    pub redundant: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldCondition {
    pub text: String,
    /// Factors selected in every vote round.
    #[serde(default)]
    pub relevant: Vec<String>,
    /// Factors selected only in the first vote round.
    #[serde(default)]
    pub flaky: Vec<String>,
    /// Factors removed by the reflection step.
    #[serde(default)]
    pub reflect_drop: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldScenario {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub outcome1: String,
    pub outcome2: String,
    pub factors: Vec<WorldFactor>,
    #[serde(default)]
    pub latents: BTreeMap<String, (f64, f64)>,
    #[serde(default)]
    pub conditions: Vec<WorldCondition>,
    /// Every request about this scenario fails in transport.
    #[serde(default)]
    pub unreachable: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub scenarios: Vec<WorldScenario>,
    /// Extra sentences appended to every generation batch.
    #[serde(default)]
    pub overgenerate: usize,
}

#[derive(Debug, Clone)]
pub struct ScriptedWorld {
    spec: WorldSpec,
    factors: HashMap<String, (usize, usize)>,
    conditions: HashMap<String, (usize, usize)>,
}

fn world_error(msg: impl Into<String>) -> GatewayError {
    GatewayError::Config(format!("scripted world: {}", msg.into()))
}

fn line_value<'a>(query: &'a str, prefix: &str) -> Option<&'a str> {
    query
        .lines()
        .find_map(|l| l.trim().strip_prefix(prefix))
        .map(str::trim)
}

fn last_string_array(query: &str) -> Vec<String> {
    json_values(query)
        .into_iter()
        .rev()
        .find_map(|v| {
            v.as_array()?
                .iter()
                .map(|s| s.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
        })
        .unwrap_or_default()
}

fn final_answer(value: Value) -> String {
    format!("Thought: scripted.\nFinal answer: {value}")
}

impl ScriptedWorld {
    pub fn new(spec: WorldSpec) -> Result<Self, GatewayError> {
        let mut factors = HashMap::new();
        let mut conditions = HashMap::new();
        for (s, scenario) in spec.scenarios.iter().enumerate() {
            for (i, f) in scenario.factors.iter().enumerate() {
                if factors.insert(normalize_text(&f.text), (s, i)).is_some() {
                    return Err(world_error(format!("factor {:?} listed twice", f.text)));
                }
            }
            for (i, c) in scenario.conditions.iter().enumerate() {
                conditions.insert(normalize_text(&c.text), (s, i));
            }
        }
        Ok(ScriptedWorld {
            spec,
            factors,
            conditions,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, GatewayError> {
        let spec: WorldSpec = serde_json::from_str(text).map_err(|e| world_error(e.to_string()))?;
        Self::new(spec)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| world_error(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    fn factor(&self, text: &str) -> Option<&WorldFactor> {
        let &(s, i) = self.factors.get(&normalize_text(text))?;
        Some(&self.spec.scenarios[s].factors[i])
    }

    fn condition(&self, text: &str) -> Option<&WorldCondition> {
        let &(s, i) = self.conditions.get(&normalize_text(text))?;
        Some(&self.spec.scenarios[s].conditions[i])
    }

    fn scenario_in(&self, query: &str) -> Option<&WorldScenario> {
        self.spec.scenarios.iter().find(|s| {
            query.contains(&s.outcome1)
                || (!s.description.is_empty() && query.contains(&s.description))
        })
    }

    fn sentences(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let query = request.query();
        let scenario = self
            .scenario_in(query)
            .ok_or_else(|| world_error("sentence request names no known scenario"))?;
        let n: usize = line_value(query, "Generate")
            .and_then(|rest| rest.split_whitespace().next()?.parse().ok())
            .ok_or_else(|| world_error("sentence request without a count"))?;
        let pool = &scenario.factors;
        if pool.is_empty() {
            return Ok(String::new());
        }
        let start = request.sample as usize * n;
        Ok((0..n + self.spec.overgenerate)
            .map(|j| {
                let f = &pool[(start + j) % pool.len()];
                format!("{}. The factor \"{}\" shapes the result.", j + 1, f.text)
            })
            .collect::<Vec<_>>()
            .join("\n"))
    }

    fn extraction(&self, request: &ChatRequest) -> String {
        let names: Vec<&str> = request
            .query()
            .lines()
            .filter_map(|l| {
                let (_, rest) = l.split_once("The factor \"")?;
                Some(rest.split_once('"')?.0)
            })
            .collect();
        final_answer(json!(names))
    }

    fn label_vote(&self, request: &ChatRequest) -> String {
        let name = line_value(request.query(), "Factor:").unwrap_or("");
        let answer = match self.factor(name) {
            Some(f) if !f.votes.is_empty() => f.votes[request.sample as usize % f.votes.len()].clone(),
            Some(f) => f.label.clone(),
            None => "Both".to_string(),
        };
        if super::extract::parse_label(&answer).is_none() {
            return format!("I cannot decide about {name}.");
        }
        final_answer(json!({ name: answer }))
    }

    fn theme(&self, request: &ChatRequest) -> String {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for name in last_string_array(request.query()) {
            if let Some(theme) = self.factor(&name).and_then(|f| f.theme.as_deref()) {
                *counts.entry(theme).or_default() += 1;
            }
        }
        let best = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(t, _)| t.to_string());
        best.unwrap_or_else(|| "General Factors".to_string())
    }

    fn prune(&self, request: &ChatRequest) -> String {
        let keep: Vec<String> = last_string_array(request.query())
            .into_iter()
            .filter(|n| !self.factor(n).is_some_and(|f| f.redundant))
            .collect();
        final_answer(json!(keep))
    }

    fn map_vote(&self, request: &ChatRequest) -> String {
        let query = request.query();
        let condition = line_value(query, "Condition:").and_then(|c| self.condition(c));
        let chosen: Vec<String> = match condition {
            None => Vec::new(),
            Some(c) => {
                let relevant: Vec<String> = c.relevant.iter().map(|t| normalize_text(t)).collect();
                let flaky: Vec<String> = c.flaky.iter().map(|t| normalize_text(t)).collect();
                last_string_array(query)
                    .into_iter()
                    .filter(|cand| {
                        let n = normalize_text(cand);
                        relevant.contains(&n) || (request.sample == 0 && flaky.contains(&n))
                    })
                    .collect()
            }
        };
        final_answer(json!({ "answer": chosen }))
    }

    fn reflect(&self, request: &ChatRequest) -> String {
        let query = request.query();
        let drop: Vec<String> = line_value(query, "Condition:")
            .and_then(|c| self.condition(c))
            .map(|c| c.reflect_drop.iter().map(|t| normalize_text(t)).collect())
            .unwrap_or_default();
        let keep: Vec<String> = last_string_array(query)
            .into_iter()
            .filter(|n| !drop.contains(&normalize_text(n)))
            .collect();
        final_answer(json!(keep))
    }

    fn phi(&self, request: &ChatRequest) -> String {
        let estimates: serde_json::Map<String, Value> = last_string_array(request.query())
            .into_iter()
            .filter_map(|n| {
                let phi = self.factor(&n)?.phi?;
                Some((n, json!(phi)))
            })
            .collect();
        if estimates.is_empty() {
            return "Thought: none of these factors are informative.".to_string();
        }
        final_answer(Value::Object(estimates))
    }

    fn discover(&self, request: &ChatRequest) -> String {
        let mut groups: Vec<(String, Vec<String>)> = Vec::new();
        for name in last_string_array(request.query()) {
            let Some(latent) = self.factor(&name).and_then(|f| f.latent.clone()) else {
                continue;
            };
            match groups.iter_mut().find(|(l, _)| *l == latent) {
                Some((_, members)) => members.push(name),
                None => groups.push((latent, vec![name])),
            }
        }
        if groups.is_empty() {
            return "Thought: these factors share no latent structure.".to_string();
        }
        let latents: Vec<Value> = groups
            .into_iter()
            .map(|(name, factors)| json!({ "name": name, "factors": factors }))
            .collect();
        final_answer(json!({ "latents": latents }))
    }

    fn latent_pairs(&self, request: &ChatRequest) -> String {
        let names: Vec<String> = json_values(request.query())
            .into_iter()
            .filter_map(|v| v.as_array().cloned())
            .flatten()
            .filter_map(|item| Some(item.get("name")?.as_str()?.to_string()))
            .collect();
        let pairs: serde_json::Map<String, Value> = names
            .into_iter()
            .filter_map(|name| {
                let (p1, p0) = self
                    .spec
                    .scenarios
                    .iter()
                    .find_map(|s| s.latents.get(&name))?;
                Some((name, json!([p1, p0])))
            })
            .collect();
        if pairs.is_empty() {
            return "Thought: no estimate available.".to_string();
        }
        final_answer(Value::Object(pairs))
    }

    fn unreachable(&self, request: &ChatRequest) -> bool {
        let query = request.query();
        self.spec.scenarios.iter().any(|s| {
            s.unreachable
                && (query.contains(&s.outcome1)
                    || (!s.description.is_empty() && query.contains(&s.description))
                    || s.factors.iter().any(|f| query.contains(&f.text))
                    || s.conditions.iter().any(|c| query.contains(&c.text)))
        })
    }

    pub fn respond(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        if self.unreachable(request) {
            return Err(GatewayError::Transport("scripted world: host unreachable".into()));
        }
        Ok(match request.tag {
            PromptTag::SentenceGen => self.sentences(request)?,
            PromptTag::FactorExtract => self.extraction(request),
            PromptTag::LabelVote => self.label_vote(request),
            PromptTag::Theme => self.theme(request),
            PromptTag::Prune => self.prune(request),
            PromptTag::MapVote => self.map_vote(request),
            PromptTag::Reflect => self.reflect(request),
            PromptTag::PhiElicit => self.phi(request),
            PromptTag::LatentDiscover => self.discover(request),
            PromptTag::LatentElicit => self.latent_pairs(request),
        })
    }
}

impl ChatProvider for ScriptedWorld {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.respond(request).map(ChatResponse::text)
    }

    fn describe(&self) -> String {
        format!("scripted world ({} scenarios)", self.spec.scenarios.len())
    }
}
