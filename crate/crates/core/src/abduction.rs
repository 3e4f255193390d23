//! Iterative factor generation.
//!
//! Each round asks the model for a batch of sentences arguing for or against
//! the outcomes, extracts candidate factors from them and merges the new
//! ones into the pool. Rounds stop once the pool reaches its target size or
//! the round budget runs out; the final pool is then labelled by majority
//! vote over repeated queries.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::domain::{normalize_text, Factor, FactorLabel, Scenario};
use crate::error::{Error, Result};
use crate::gateway::{extract, Gateway, PromptTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    TargetReached,
    MaxRounds,
}

/// Label answers collected for one factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub outcome1: u32,
    pub outcome2: u32,
    pub neutral: u32,
    /// Samples that produced no usable answer.
    pub failed: u32,
}

impl VoteTally {
    pub fn add(&mut self, label: Option<FactorLabel>) {
        match label {
            Some(FactorLabel::SupportsO1) => self.outcome1 += 1,
            Some(FactorLabel::SupportsO2) => self.outcome2 += 1,
            Some(FactorLabel::Neutral) => self.neutral += 1,
            None => self.failed += 1,
        }
    }

    /// The label with a strict plurality; any tie, or no usable vote, is
    /// neutral.
    pub fn majority(&self) -> FactorLabel {
        let counts = [
            (self.outcome1, FactorLabel::SupportsO1),
            (self.outcome2, FactorLabel::SupportsO2),
            (self.neutral, FactorLabel::Neutral),
        ];
        let top = counts.iter().map(|c| c.0).max().unwrap_or(0);
        let mut leaders = counts.iter().filter(|c| c.0 == top);
        match (leaders.next(), leaders.next()) {
            (Some(&(n, label)), None) if n > 0 => label,
            _ => FactorLabel::Neutral,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbductionState {
    /// Rounds actually run.
    pub round: u32,
    /// Factors in the order they were first generated.
    pub pool: Vec<Factor>,
    pub stopped_reason: StopReason,
    /// Pool size after each round.
    pub pool_sizes: Vec<usize>,
    pub tallies: BTreeMap<String, VoteTally>,
}

impl AbductionState {
    /// The first `n` factors in generation order, labels kept.
    pub fn truncated(&self, n: usize) -> AbductionState {
        let pool: Vec<Factor> = self.pool.iter().take(n).cloned().collect();
        let keep: HashSet<&str> = pool.iter().map(|f| f.id.as_str()).collect();
        AbductionState {
            round: self.round,
            pool_sizes: self.pool_sizes.iter().map(|&s| s.min(n)).collect(),
            tallies: self
                .tallies
                .iter()
                .filter(|(id, _)| keep.contains(id.as_str()))
                .map(|(id, t)| (id.clone(), *t))
                .collect(),
            stopped_reason: self.stopped_reason,
            pool,
        }
    }
}

fn scenario_vars(scenario: &Scenario) -> [(&'static str, &str); 3] {
    [
        ("scenario", scenario.description.as_str()),
        ("outcome1", scenario.outcome1.as_str()),
        ("outcome2", scenario.outcome2.as_str()),
    ]
}

/// Asks for `batch` sentences about the outcome contrast. `round` separates
/// otherwise identical requests across rounds. Extra sentences are dropped.
pub fn generate_sentences(
    gateway: &Gateway,
    scenario: &Scenario,
    batch: usize,
    round: u32,
) -> Result<Vec<String>> {
    if batch == 0 {
        return Err(Error::precondition("sentence batch must be at least 1"));
    }
    let n = batch.to_string();
    let request = gateway.request(
        PromptTag::SentenceGen,
        &[
            ("n", &n),
            ("scenario", &scenario.description),
            ("outcome", &scenario.outcome1),
            ("opposite", &scenario.outcome2),
        ],
        round,
    );
    let mut sentences = gateway.ask(&request, extract::lines)?.unwrap_or_default();
    sentences.truncate(batch);
    Ok(sentences)
}

/// Extracts candidate factor texts from `sentences`, removing duplicates
/// within the batch.
pub fn harvest_factors(gateway: &Gateway, sentences: &[String]) -> Result<Vec<String>> {
    if sentences.is_empty() {
        return Err(Error::precondition("no sentences to harvest"));
    }
    let numbered = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    let request = gateway.request(PromptTag::FactorExtract, &[("sentences", &numbered)], 0);
    let raw = gateway.ask(&request, extract::string_array)?.unwrap_or_default();
    Ok(dedup_texts(raw))
}

fn dedup_texts(texts: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    texts
        .into_iter()
        .filter(|t| {
            let n = normalize_text(t);
            !n.is_empty() && seen.insert(n)
        })
        .collect()
}

/// Adds candidates not already in the pool. Returns how many were added.
pub fn merge_validated(pool: &mut Vec<Factor>, candidates: &[String]) -> usize {
    let mut known: HashSet<String> = pool.iter().map(|f| f.id.clone()).collect();
    let before = pool.len();
    for factor in candidates.iter().filter_map(|c| Factor::from_text(c)) {
        if known.insert(factor.id.clone()) {
            pool.push(factor);
        }
    }
    pool.len() - before
}

/// Majority label per factor over `m` repeated votes.
pub fn vote_factor_labels(
    gateway: &Gateway,
    scenario: &Scenario,
    factors: &[Factor],
    m: u32,
) -> Result<BTreeMap<String, VoteTally>> {
    if m == 0 || m.is_multiple_of(2) {
        return Err(Error::Config(format!("label votes must be odd, got {m}")));
    }
    let vars = scenario_vars(scenario);
    let requests: Vec<_> = factors
        .iter()
        .flat_map(|f| {
            let mut v = vars.to_vec();
            v.push(("factor", f.text.as_str()));
            (0..m).map(move |s| gateway.request(PromptTag::LabelVote, &v, s))
        })
        .collect();
    let answers = gateway.ask_all(&requests, extract::label_map);

    let mut tallies = BTreeMap::new();
    for (factor, votes) in factors.iter().zip(answers.chunks(m as usize)) {
        let mut tally = VoteTally::default();
        for vote in votes {
            let label = match vote {
                Ok(Some(map)) => pick_label(map, &factor.text),
                Ok(None) => None,
                Err(e) if e.is_fatal() => return Err(e.clone().into()),
                Err(_) => None,
            };
            tally.add(label);
        }
        tallies.insert(factor.id.clone(), tally);
    }
    Ok(tallies)
}

fn pick_label(map: &BTreeMap<String, FactorLabel>, text: &str) -> Option<FactorLabel> {
    let wanted = normalize_text(text);
    map.iter()
        .find(|(k, _)| normalize_text(k) == wanted)
        .map(|(_, l)| *l)
        .or_else(|| (map.len() == 1).then(|| *map.values().next().expect("one entry")))
}

/// Runs generation rounds until the target size or round budget is reached,
/// then labels every factor.
pub fn build_factor_pool(
    gateway: &Gateway,
    scenario: &Scenario,
    config: &PipelineConfig,
) -> Result<AbductionState> {
    let cfg = &config.abduction;
    let mut pool = Vec::new();
    let mut pool_sizes = Vec::new();
    let mut stopped_reason = StopReason::MaxRounds;
    let mut round = 0;

    if cfg.n_target == 0 {
        stopped_reason = StopReason::TargetReached;
    }
    while stopped_reason == StopReason::MaxRounds && round < cfg.max_rounds {
        round += 1;
        match run_round(gateway, scenario, cfg.batch, round - 1) {
            Ok(candidates) => {
                let added = merge_validated(&mut pool, &candidates);
                log::debug!("{} round {round}: +{added} -> {}", scenario.id, pool.len());
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => log::warn!("{} round {round} lost: {e}", scenario.id),
        }
        pool_sizes.push(pool.len());
        if pool.len() >= cfg.n_target {
            stopped_reason = StopReason::TargetReached;
        }
    }

    let tallies = vote_factor_labels(gateway, scenario, &pool, cfg.label_votes)?;
    for factor in &mut pool {
        factor.label = Some(tallies[&factor.id].majority());
    }
    Ok(AbductionState {
        round,
        pool,
        stopped_reason,
        pool_sizes,
        tallies,
    })
}

fn run_round(
    gateway: &Gateway,
    scenario: &Scenario,
    batch: usize,
    round: u32,
) -> Result<Vec<String>> {
    let sentences = generate_sentences(gateway, scenario, batch, round)?;
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    harvest_factors(gateway, &sentences)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tally(o1: u32, o2: u32, n: u32) -> VoteTally {
        VoteTally {
            outcome1: o1,
            outcome2: o2,
            neutral: n,
            failed: 0,
        }
    }

    #[test]
    fn majority_and_ties() {
        assert_eq!(tally(3, 0, 0).majority(), FactorLabel::SupportsO1);
        assert_eq!(tally(1, 2, 0).majority(), FactorLabel::SupportsO2);
        assert_eq!(tally(1, 1, 1).majority(), FactorLabel::Neutral);
        assert_eq!(tally(1, 1, 0).majority(), FactorLabel::Neutral);
        assert_eq!(tally(0, 0, 0).majority(), FactorLabel::Neutral);
        assert_eq!(tally(1, 0, 2).majority(), FactorLabel::Neutral);
    }

    #[test]
    fn merge_drops_known_and_blank_texts() {
        let mut pool = vec![Factor::from_text("a").unwrap()];
        assert_eq!(merge_validated(&mut pool, &["A".into(), "b".into(), " ".into()]), 1);
        let texts: Vec<&str> = pool.iter().map(|f| f.text.as_str()).collect();
        assert_eq!(texts, vec!["a", "b"]);

        let mut empty = Vec::new();
        merge_validated(&mut empty, &["x".into()]);
        assert_eq!(empty.len(), 1);
        assert_eq!(merge_validated(&mut empty, &[]), 0);
    }

    #[test]
    fn batch_dedup_keeps_first_surface_form() {
        assert_eq!(dedup_texts(vec!["X".into(), "x ".into(), "y".into()]), vec!["X", "y"]);
    }

    #[test]
    fn truncation_keeps_generation_order() {
        let mut pool = Vec::new();
        merge_validated(&mut pool, &["c".into(), "a".into(), "b".into()]);
        let state = AbductionState {
            round: 1,
            tallies: pool.iter().map(|f| (f.id.clone(), tally(1, 0, 0))).collect(),
            pool,
            stopped_reason: StopReason::TargetReached,
            pool_sizes: vec![3],
        };
        let t = state.truncated(2);
        assert_eq!(t.pool.iter().map(|f| f.text.as_str()).collect::<Vec<_>>(), vec!["c", "a"]);
        assert_eq!(t.tallies.len(), 2);
        assert_eq!(t.pool_sizes, vec![2]);
    }
}
