//! Maps a condition onto factors of a [`FactorSpace`].
//!
//! Retrieval runs coarse to fine: the condition embedding picks the closest
//! cluster prototypes, then the closest members inside each, plus the
//! closest unclustered factors. The model then votes several times on which
//! candidates relate to the condition, and a final reflection pass trims
//! anything without a direct link. An empty result means the condition
//! abstains.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::domain::{normalize_text, Condition, Factor, FactorSpace, Scenario};
use crate::error::{Error, Result};
use crate::gateway::{extract, Gateway, PromptTag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingResult {
    pub condition_id: String,
    pub candidates: BTreeSet<String>,
    pub votes: BTreeMap<String, u32>,
    pub voted: BTreeSet<String>,
    #[serde(rename = "final")]
    pub final_set: BTreeSet<String>,
    pub abstained: bool,
    /// Seed of the candidate presentation order.
    pub seed: u64,
}

impl MappingResult {
    fn abstaining(condition_id: &str, seed: u64) -> Self {
        MappingResult {
            condition_id: condition_id.to_string(),
            candidates: BTreeSet::new(),
            votes: BTreeMap::new(),
            voted: BTreeSet::new(),
            final_set: BTreeSet::new(),
            abstained: true,
            seed,
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// The `k` highest-scoring keys; equal scores go to the smaller key.
fn top_k<K: Ord + Clone>(mut scored: Vec<(f64, K)>, k: usize) -> Vec<K> {
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|(_, key)| key).collect()
}

fn top_factors(
    gateway: &Gateway,
    query: &[f64],
    factors: &[&Factor],
    k: usize,
) -> Result<Vec<String>> {
    if factors.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let texts: Vec<String> = factors.iter().map(|f| f.text.clone()).collect();
    let vectors = gateway.embed(&texts)?;
    let scored = factors
        .iter()
        .zip(&vectors)
        .map(|(f, v)| (cosine(query, v), f.id.clone()))
        .collect();
    Ok(top_k(scored, k))
}

/// Coarse-to-fine candidate retrieval.
pub fn retrieve_candidates(
    gateway: &Gateway,
    space: &FactorSpace,
    condition: &Condition,
    k1: usize,
    k2: usize,
) -> Result<BTreeSet<String>> {
    if space.clusters.is_empty() && space.unclustered.is_empty() {
        return Err(Error::precondition("factor space has nothing to search"));
    }
    let query = gateway.embed(std::slice::from_ref(&condition.text))?.remove(0);
    let members = |ids: &mut dyn Iterator<Item = &String>| -> Vec<&Factor> {
        ids.filter_map(|id| space.factor(id)).collect()
    };

    let mut scored_clusters = Vec::with_capacity(space.clusters.len());
    for (i, cluster) in space.clusters.iter().enumerate() {
        let score = match &cluster.prototype {
            Some(p) => cosine(&query, p),
            None => {
                let texts: Vec<String> = members(&mut cluster.members.iter())
                    .iter()
                    .map(|f| f.text.clone())
                    .collect();
                if texts.is_empty() {
                    continue;
                }
                let vectors = gateway.embed(&texts)?;
                let mean: Vec<f64> = (0..query.len())
                    .map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / vectors.len() as f64)
                    .collect();
                cosine(&query, &mean)
            }
        };
        scored_clusters.push((score, i));
    }

    let mut candidates = BTreeSet::new();
    for i in top_k(scored_clusters, k1) {
        let pool = members(&mut space.clusters[i].members.iter());
        candidates.extend(top_factors(gateway, &query, &pool, k2)?);
    }
    let pool = members(&mut space.unclustered.iter());
    candidates.extend(top_factors(gateway, &query, &pool, k2)?);
    Ok(candidates)
}

/// `ceil(vote_ratio * rounds)`.
pub fn vote_threshold(rounds: u32, vote_ratio: f64) -> u32 {
    (vote_ratio * rounds as f64 - 1e-9).ceil().max(0.0) as u32
}

/// Candidate texts in a seeded shuffled order, with a lookup back to ids.
fn presentation(
    space: &FactorSpace,
    candidates: &BTreeSet<String>,
    seed: u64,
) -> (Vec<String>, BTreeMap<String, String>) {
    let mut factors: Vec<&Factor> = candidates.iter().filter_map(|id| space.factor(id)).collect();
    factors.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let texts = factors.iter().map(|f| f.text.clone()).collect();
    let lookup = factors.iter().map(|f| (f.text.clone(), f.id.clone())).collect();
    (texts, lookup)
}

fn resolve(lookup: &BTreeMap<String, String>, names: &[String]) -> BTreeSet<String> {
    names
        .iter()
        .filter_map(|n| lookup.get(&normalize_text(n)).cloned())
        .collect()
}

/// Runs `rounds` selection queries and keeps candidates chosen at least
/// `vote_threshold(rounds, vote_ratio)` times.
#[allow(clippy::too_many_arguments)]
pub fn vote_filter(
    gateway: &Gateway,
    space: &FactorSpace,
    scenario: &Scenario,
    condition: &Condition,
    candidates: &BTreeSet<String>,
    rounds: u32,
    vote_ratio: f64,
    seed: u64,
) -> Result<(BTreeMap<String, u32>, BTreeSet<String>)> {
    if rounds == 0 {
        return Err(Error::Config("vote rounds must be at least 1".into()));
    }
    let mut votes: BTreeMap<String, u32> = candidates.iter().map(|id| (id.clone(), 0)).collect();
    if candidates.is_empty() {
        return Ok((votes, BTreeSet::new()));
    }
    let (texts, lookup) = presentation(space, candidates, seed);
    let listed = serde_json::to_string(&texts).expect("string list serializes");
    let requests: Vec<_> = (0..rounds)
        .map(|s| {
            gateway.request(
                PromptTag::MapVote,
                &[
                    ("scenario", &scenario.description),
                    ("condition", &condition.text),
                    ("candidates", &listed),
                ],
                s,
            )
        })
        .collect();
    for answer in gateway.ask_all(&requests, extract::string_array) {
        let chosen = match answer {
            Ok(Some(names)) => resolve(&lookup, &names),
            Err(e) if e.is_fatal() => return Err(e.into()),
            _ => BTreeSet::new(),
        };
        for id in chosen {
            *votes.entry(id).or_default() += 1;
        }
    }
    let gamma = vote_threshold(rounds, vote_ratio);
    let voted = votes
        .iter()
        .filter(|(_, &v)| v >= gamma)
        .map(|(id, _)| id.clone())
        .collect();
    Ok((votes, voted))
}

/// One reflection query over the voted set; keeps its intersection with the
/// answer. An unusable answer keeps everything.
pub fn reflective_refine(
    gateway: &Gateway,
    space: &FactorSpace,
    condition: &Condition,
    voted: &BTreeSet<String>,
) -> Result<BTreeSet<String>> {
    if voted.is_empty() {
        return Ok(BTreeSet::new());
    }
    let factors: Vec<&Factor> = voted.iter().filter_map(|id| space.factor(id)).collect();
    let texts: Vec<&str> = factors.iter().map(|f| f.text.as_str()).collect();
    let listed = serde_json::to_string(&texts).expect("string list serializes");
    let request = gateway.request(
        PromptTag::Reflect,
        &[("condition", &condition.text), ("factors", &listed)],
        0,
    );
    match gateway.ask(&request, extract::string_array) {
        Ok(Some(keep)) => {
            let lookup = factors.iter().map(|f| (f.text.clone(), f.id.clone())).collect();
            Ok(resolve(&lookup, &keep)
                .into_iter()
                .filter(|id| voted.contains(id))
                .collect())
        }
        Ok(None) => Ok(voted.clone()),
        Err(e) if e.is_fatal() => Err(e.into()),
        Err(e) => {
            log::warn!("reflection for {} failed: {e}", condition.id);
            Ok(voted.clone())
        }
    }
}

/// Retrieval, voting and reflection for one condition.
pub fn map_condition(
    gateway: &Gateway,
    space: &FactorSpace,
    scenario: &Scenario,
    condition: &Condition,
    config: &PipelineConfig,
) -> Result<MappingResult> {
    let cfg = &config.mapping;
    if space.is_empty() {
        return Ok(MappingResult::abstaining(&condition.id, cfg.seed));
    }
    let candidates = retrieve_candidates(gateway, space, condition, cfg.k1, cfg.k2)?;
    let (votes, voted) = vote_filter(
        gateway,
        space,
        scenario,
        condition,
        &candidates,
        cfg.rounds,
        cfg.vote_ratio,
        cfg.seed,
    )?;
    let final_set = reflective_refine(gateway, space, condition, &voted)?;
    Ok(MappingResult {
        condition_id: condition.id.clone(),
        abstained: final_set.is_empty(),
        candidates,
        votes,
        voted,
        final_set,
        seed: cfg.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_arithmetic() {
        assert_eq!(vote_threshold(3, 0.5), 2);
        assert_eq!(vote_threshold(4, 0.5), 2);
        assert_eq!(vote_threshold(5, 1.0), 5);
        assert_eq!(vote_threshold(1, 0.1), 1);
        assert_eq!(vote_threshold(10, 0.3), 3);
    }

    #[test]
    fn top_k_breaks_ties_by_key() {
        let scored = vec![(0.5, "c"), (0.9, "b"), (0.5, "a"), (0.1, "d")];
        assert_eq!(top_k(scored, 3), vec!["b", "a", "c"]);
    }

    #[test]
    fn cosine_of_zero_vector_is_zero() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
    }
}
