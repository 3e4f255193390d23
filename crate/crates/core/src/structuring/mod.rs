//! Organises a flat factor pool into themed clusters.
//!
//! Factors are embedded, projected to a low-dimensional space and
//! density-clustered there. Each cluster is named by the model, trimmed of
//! near-duplicates and given a prototype vector in the original embedding
//! space for retrieval. Points the clusterer leaves as noise form the
//! unclustered pool.

mod backend;

use std::collections::{BTreeMap, BTreeSet, HashSet};

use crate::abduction::AbductionState;
use crate::config::PipelineConfig;
use crate::domain::{normalize_text, Factor, FactorCluster, FactorSpace, SpaceStats};
use crate::error::{Error, Result};
use crate::gateway::{extract, Gateway, PromptTag};
use crate::math::out_of_range;

pub use backend::{
    clusterer, derive_cluster_params, derive_reduction_params, reducer, ClusterMetric,
    ClusterParams, Clusterer, HdbscanBackend, PcaReducer, ReductionMetric, ReductionParams,
    Reducer,
};

/// Name of the single cluster used when clustering is skipped.
pub const DEFAULT_THEME: &str = "default";

/// Density clusters and noise, as indices into the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub clusters: Vec<Vec<usize>>,
    pub noise: Vec<usize>,
}

pub fn reduce_embeddings(
    reducer: &dyn Reducer,
    vectors: &[Vec<f64>],
    params: &ReductionParams,
) -> Result<Vec<Vec<f64>>> {
    if vectors.len() < 2 {
        return Err(out_of_range("vector count", &vectors.len()).into());
    }
    let out = reducer.reduce(vectors, params)?;
    if out.len() != vectors.len() {
        return Err(Error::Backend(format!(
            "reducer returned {} vectors for {}",
            out.len(),
            vectors.len()
        )));
    }
    Ok(out)
}

/// Clusters `reduced` and drops any cluster below the minimum size into
/// noise. Clusters are ordered by backend label, members by index.
pub fn cluster_factors(
    clusterer: &dyn Clusterer,
    reduced: &[Vec<f64>],
    params: &ClusterParams,
) -> Result<Partition> {
    if reduced.len() < 2 {
        return Err(out_of_range("point count", &reduced.len()).into());
    }
    let labels = clusterer.cluster(reduced, params)?;
    if labels.len() != reduced.len() {
        return Err(Error::Backend("clusterer label count mismatch".into()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut noise = Vec::new();
    for (i, label) in labels.into_iter().enumerate() {
        match label {
            Some(l) => groups.entry(l).or_default().push(i),
            None => noise.push(i),
        }
    }
    let mut clusters = Vec::new();
    for members in groups.into_values() {
        if members.len() >= params.min_cluster_size {
            clusters.push(members);
        } else {
            noise.extend(members);
        }
    }
    noise.sort_unstable();
    Ok(Partition { clusters, noise })
}

fn json_names<'a>(factors: impl IntoIterator<Item = &'a Factor>) -> String {
    let names: Vec<&str> = factors.into_iter().map(|f| f.text.as_str()).collect();
    serde_json::to_string(&names).expect("string list serializes")
}

/// One short theme per cluster. Failed queries fall back to `Cluster <k>`;
/// repeated themes get a ` (2)`, ` (3)`, ... suffix.
pub fn theme_clusters(gateway: &Gateway, clusters: &[Vec<Factor>]) -> Result<Vec<String>> {
    if clusters.iter().any(Vec::is_empty) {
        return Err(Error::precondition("cannot theme an empty cluster"));
    }
    let requests: Vec<_> = clusters
        .iter()
        .map(|c| gateway.request(PromptTag::Theme, &[("factors", &json_names(c))], 0))
        .collect();
    let mut themes = Vec::with_capacity(clusters.len());
    for (k, answer) in gateway.ask_all(&requests, extract::theme).into_iter().enumerate() {
        let theme = match answer {
            Ok(Some(t)) if !t.trim().is_empty() => t,
            Err(e) if e.is_fatal() => return Err(e.into()),
            _ => format!("Cluster {}", k + 1),
        };
        themes.push(theme);
    }
    Ok(unique_themes(themes))
}

fn unique_themes(themes: Vec<String>) -> Vec<String> {
    let mut seen: HashSet<String> = HashSet::new();
    themes
        .into_iter()
        .map(|theme| {
            let mut candidate = theme.clone();
            let mut k = 1;
            while !seen.insert(normalize_text(&candidate)) {
                k += 1;
                candidate = format!("{theme} ({k})");
            }
            candidate
        })
        .collect()
}

/// Theme label with its member factors.
pub type ThemedCluster = (String, Vec<Factor>);

/// Asks the model which members of each cluster to keep. Returns the
/// trimmed clusters and the ids that were dropped. A cluster is left whole
/// when the answer is unusable or would keep nothing.
pub fn prune_redundancy(
    gateway: &Gateway,
    themed: Vec<ThemedCluster>,
) -> Result<(Vec<ThemedCluster>, BTreeSet<String>)> {
    let asked: Vec<usize> = (0..themed.len()).filter(|&i| themed[i].1.len() > 1).collect();
    let requests: Vec<_> = asked
        .iter()
        .map(|&i| {
            let (theme, members) = &themed[i];
            gateway.request(
                PromptTag::Prune,
                &[("theme", theme), ("factors", &json_names(members))],
                0,
            )
        })
        .collect();
    let answers = gateway.ask_all(&requests, extract::string_array);

    let mut keep_lists: BTreeMap<usize, HashSet<String>> = BTreeMap::new();
    for (&i, answer) in asked.iter().zip(answers) {
        match answer {
            Ok(Some(keep)) => {
                keep_lists.insert(i, keep.iter().map(|k| normalize_text(k)).collect());
            }
            Ok(None) => {}
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => log::warn!("pruning {:?} failed: {e}", themed[i].0),
        }
    }

    let mut dropped = BTreeSet::new();
    let mut out = Vec::with_capacity(themed.len());
    for (i, (theme, members)) in themed.into_iter().enumerate() {
        let Some(keep) = keep_lists.get(&i) else {
            out.push((theme, members));
            continue;
        };
        let (kept, gone): (Vec<Factor>, Vec<Factor>) =
            members.into_iter().partition(|f| keep.contains(&f.text));
        if kept.is_empty() {
            out.push((theme, gone));
            continue;
        }
        dropped.extend(gone.into_iter().map(|f| f.id));
        out.push((theme, kept));
    }
    Ok((out, dropped))
}

/// `alpha * theme + (1 - alpha) * mean(members)`.
pub fn cluster_prototype(theme_vec: &[f64], member_vecs: &[Vec<f64>], alpha: f64) -> Result<Vec<f64>> {
    if member_vecs.is_empty() {
        return Err(out_of_range("member count", &0usize).into());
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(out_of_range("alpha", &alpha).into());
    }
    let d = theme_vec.len();
    if let Some(v) = member_vecs.iter().find(|v| v.len() != d) {
        return Err(crate::math::DomainError::LengthMismatch {
            expected: d,
            got: v.len(),
        }
        .into());
    }
    let mean = mean_vector(member_vecs);
    Ok(theme_vec
        .iter()
        .zip(mean)
        .map(|(t, m)| alpha * t + (1.0 - alpha) * m)
        .collect())
}

fn mean_vector(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn default_space(
    gateway: &Gateway,
    scenario_id: &str,
    factors: &[Factor],
    stats: SpaceStats,
) -> Result<FactorSpace> {
    let mut space = FactorSpace::empty(scenario_id);
    space.stats = stats;
    if factors.is_empty() {
        return Ok(space);
    }
    let texts: Vec<String> = factors.iter().map(|f| f.text.clone()).collect();
    let vectors = gateway.embed(&texts)?;
    space.clusters.push(FactorCluster {
        theme: DEFAULT_THEME.to_string(),
        members: factors.iter().map(|f| f.id.clone()).collect(),
        prototype: Some(mean_vector(&vectors)),
    });
    space.factors = factors.iter().map(|f| (f.id.clone(), f.clone())).collect();
    Ok(space)
}

/// Builds the factor space for a labelled pool.
///
/// With clustering disabled, or too few factors to form two clusters, every
/// factor lands in one cluster named [`DEFAULT_THEME`] whose prototype is
/// the member mean. The same fallback applies when the clusterer finds no
/// cluster at all.
pub fn build_hierarchy(
    gateway: &Gateway,
    scenario_id: &str,
    state: &AbductionState,
    config: &PipelineConfig,
) -> Result<FactorSpace> {
    let factors = &state.pool;
    let n = factors.len();
    let mut stats = SpaceStats {
        rounds_used: state.round,
        factors_generated: n,
        clusters_found: 0,
    };
    if !config.structuring.clustering || n < 2 {
        return default_space(gateway, scenario_id, factors, stats);
    }
    let cluster_params = derive_cluster_params(n)?;
    if n < 2 * cluster_params.min_cluster_size {
        return default_space(gateway, scenario_id, factors, stats);
    }

    let texts: Vec<String> = factors.iter().map(|f| f.text.clone()).collect();
    let vectors = gateway.embed(&texts)?;
    let reduced = reduce_embeddings(
        reducer(config.structuring.reduction).as_ref(),
        &vectors,
        &derive_reduction_params(n)?,
    )?;
    let partition = cluster_factors(
        clusterer(config.structuring.cluster_backend).as_ref(),
        &reduced,
        &cluster_params,
    )?;
    stats.clusters_found = partition.clusters.len();
    if partition.clusters.is_empty() {
        log::info!("{scenario_id}: no density clusters among {n} factors");
        return default_space(gateway, scenario_id, factors, stats);
    }

    let groups: Vec<Vec<Factor>> = partition
        .clusters
        .iter()
        .map(|c| c.iter().map(|&i| factors[i].clone()).collect())
        .collect();
    let themes = theme_clusters(gateway, &groups)?;
    let (pruned, dropped) = prune_redundancy(gateway, themes.into_iter().zip(groups).collect())?;

    let theme_texts: Vec<String> = pruned.iter().map(|(t, _)| t.clone()).collect();
    let theme_vecs = gateway.embed(&theme_texts)?;
    let index: BTreeMap<&str, usize> = factors
        .iter()
        .enumerate()
        .map(|(i, f)| (f.id.as_str(), i))
        .collect();

    let mut space = FactorSpace::empty(scenario_id);
    for ((theme, members), theme_vec) in pruned.into_iter().zip(&theme_vecs) {
        let member_vecs: Vec<Vec<f64>> = members
            .iter()
            .map(|f| vectors[index[f.id.as_str()]].clone())
            .collect();
        space.clusters.push(FactorCluster {
            prototype: Some(cluster_prototype(theme_vec, &member_vecs, config.mapping.alpha)?),
            members: members.iter().map(|f| f.id.clone()).collect(),
            theme,
        });
    }
    space.unclustered = partition.noise.iter().map(|&i| factors[i].id.clone()).collect();
    space.factors = factors
        .iter()
        .filter(|f| !dropped.contains(&f.id))
        .map(|f| (f.id.clone(), f.clone()))
        .collect();
    space.stats = stats;
    Ok(space)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prototype_endpoints_and_midpoint() {
        let theme = [1.0, 0.0];
        assert_eq!(cluster_prototype(&theme, &[vec![0.0, 1.0]], 0.5).unwrap(), vec![0.5, 0.5]);
        assert_eq!(cluster_prototype(&theme, &[vec![0.3, 0.7]], 1.0).unwrap(), vec![1.0, 0.0]);
        let square = [vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        assert_eq!(cluster_prototype(&theme, &square, 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(cluster_prototype(&theme, &[], 0.5).is_err());
        assert!(cluster_prototype(&theme, &[vec![0.0, 1.0]], 1.5).is_err());
    }

    #[test]
    fn duplicate_themes_are_suffixed() {
        let themes = unique_themes(vec!["Safety".into(), "Cost".into(), "Safety".into(), "safety".into()]);
        assert_eq!(themes, vec!["Safety", "Cost", "Safety (2)", "safety (3)"]);
    }

    struct Fixed(Vec<Option<usize>>);

    impl Clusterer for Fixed {
        fn cluster(&self, _: &[Vec<f64>], _: &ClusterParams) -> Result<Vec<Option<usize>>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn undersized_clusters_fall_into_noise() {
        let pts = vec![vec![0.0]; 5];
        let params = ClusterParams {
            min_cluster_size: 2,
            metric: ClusterMetric::Euclidean,
        };
        let p = cluster_factors(&Fixed(vec![Some(1), None, Some(0), Some(1), Some(0)]), &pts, &params)
            .unwrap();
        assert_eq!(p.clusters, vec![vec![2, 4], vec![0, 3]]);
        assert!(p.noise == vec![1]);
        let p = cluster_factors(&Fixed(vec![Some(1), None, Some(0), Some(1), Some(7)]), &pts, &params)
            .unwrap();
        assert_eq!(p.clusters, vec![vec![0, 3]]);
        assert_eq!(p.noise, vec![1, 2, 4]);
    }
}
