//! Posterior inference over mapped factors.
//!
//! Each mapped factor gets an elicited strength `phi = P(O1 | f)`, used as
//! its likelihood under the symmetric channel `P(f | O1) = phi`,
//! `P(f | O2) = 1 - phi`. Two models read those parameters: naive Bayes, and
//! a network in which the factors hang off binary latents that in turn depend
//! on the outcome. Their posteriors are pooled into one probability.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::config::{Aggregator, PipelineConfig};
use crate::domain::{normalize_text, Factor, FactorLabel, FactorSpace, Provenance, Scenario};
use crate::error::{Error, Result};
use crate::gateway::{extract, Gateway, PromptTag};
use crate::mapping::MappingResult;
use crate::math::{
    self, aggregate_bma, aggregate_lop, label_prior, latent_cpt_from_counts, smooth_probability,
    CbnPosterior, GroupFactor, LatentGroup,
};
use crate::scalar::{Field, Real};

/// Factors per strength-elicitation query.
pub const PHI_CHUNK: usize = 40;

pub const RESIDUAL_LATENT: &str = "ResidualLat";
pub const ALL_LATENT: &str = "AllLat";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVariable<T> {
    pub name: String,
    pub members: BTreeSet<String>,
    /// `P(L = 1 | O1)`
    pub p_given_o1: T,
    /// `P(L = 1 | O2)`
    pub p_given_o2: T,
}

/// Factors observed present for one condition.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub active: BTreeSet<String>,
}

impl EvidenceSet {
    pub fn new<I: IntoIterator<Item = S>, S: Into<String>>(ids: I) -> Self {
        EvidenceSet {
            active: ids.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }
}

/// Factor likelihoods plus a latent partition of the factors. With no
/// latents the network part reduces to naive Bayes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentBayesModel<T> {
    pub scenario_id: String,
    pub factor_params: BTreeMap<String, T>,
    pub latents: Vec<LatentVariable<T>>,
}

impl<T: Field> LatentBayesModel<T> {
    pub fn new(
        scenario_id: impl Into<String>,
        factor_params: BTreeMap<String, T>,
        latents: Vec<LatentVariable<T>>,
    ) -> Result<Self> {
        if let Some(theta) = factor_params.values().find(|t| !t.in_open_unit_interval()) {
            return Err(math::out_of_range("factor likelihood", theta).into());
        }
        let mut seen = BTreeSet::new();
        for latent in &latents {
            if latent.members.is_empty() {
                return Err(Error::precondition(format!("latent {} has no members", latent.name)));
            }
            for p in [&latent.p_given_o1, &latent.p_given_o2] {
                if !p.in_open_unit_interval() {
                    return Err(math::out_of_range("latent conditional", p).into());
                }
            }
            for id in &latent.members {
                if !factor_params.contains_key(id) {
                    return Err(Error::precondition(format!(
                        "latent {} names unknown factor {id}",
                        latent.name
                    )));
                }
                if !seen.insert(id.clone()) {
                    return Err(Error::precondition(format!("factor {id} has two latent parents")));
                }
            }
        }
        if !latents.is_empty() && seen.len() != factor_params.len() {
            return Err(Error::precondition("latents do not cover every factor"));
        }
        Ok(LatentBayesModel {
            scenario_id: scenario_id.into(),
            factor_params,
            latents,
        })
    }

    /// A model without latents.
    pub fn naive_bayes(scenario_id: impl Into<String>, factor_params: BTreeMap<String, T>) -> Result<Self> {
        Self::new(scenario_id, factor_params, Vec::new())
    }

    fn check_evidence(&self, evidence: &EvidenceSet) -> Result<()> {
        match evidence.active.iter().find(|id| !self.factor_params.contains_key(*id)) {
            Some(id) => Err(Error::precondition(format!("evidence names unknown factor {id}"))),
            None => Ok(()),
        }
    }

    fn evidence_thetas(&self, evidence: &EvidenceSet) -> Result<Vec<T>> {
        self.check_evidence(evidence)?;
        Ok(evidence
            .active
            .iter()
            .map(|id| self.factor_params[id].clone())
            .collect())
    }

    /// Per-latent factor groups with observation flags.
    pub fn groups(&self, evidence: &EvidenceSet) -> Result<Vec<LatentGroup<T>>> {
        self.check_evidence(evidence)?;
        Ok(self
            .latents
            .iter()
            .map(|l| LatentGroup {
                p_given_o1: l.p_given_o1.clone(),
                p_given_o2: l.p_given_o2.clone(),
                factors: l
                    .members
                    .iter()
                    .map(|id| GroupFactor {
                        theta: self.factor_params[id].clone(),
                        observed: evidence.active.contains(id),
                    })
                    .collect(),
            })
            .collect())
    }

    /// `(P(E | O1), P(E | O2))` under naive Bayes.
    pub fn nb_likelihoods(&self, evidence: &EvidenceSet) -> Result<(T, T)> {
        Ok(math::nb_likelihoods(&self.evidence_thetas(evidence)?)?)
    }

    /// `(P(E | O1), P(E | O2))` under the latent network.
    pub fn cbn_likelihoods(&self, evidence: &EvidenceSet) -> Result<(T, T)> {
        if self.latents.is_empty() {
            return self.nb_likelihoods(evidence);
        }
        Ok(math::cbn_likelihoods(&self.groups(evidence)?)?)
    }

    /// Network posterior by enumerating every latent and unobserved factor.
    pub fn cbn_posterior_bruteforce(&self, evidence: &EvidenceSet) -> Result<T> {
        if self.latents.is_empty() {
            let (l1, l2) = self.nb_likelihoods(evidence)?;
            return Ok(l1.clone() / (l1 + l2));
        }
        Ok(math::cbn_posterior_bruteforce(&self.groups(evidence)?)?)
    }
}

impl<T: Real> LatentBayesModel<T> {
    pub fn nb_posterior(&self, evidence: &EvidenceSet) -> Result<T> {
        Ok(math::nb_posterior(&self.evidence_thetas(evidence)?)?)
    }

    pub fn cbn_posterior(&self, evidence: &EvidenceSet) -> Result<CbnPosterior<T>> {
        if self.latents.is_empty() {
            let thetas = self.evidence_thetas(evidence)?;
            let l1 = thetas.iter().fold(T::zero(), |acc, t| acc + t.ln());
            let l2 = thetas.iter().fold(T::zero(), |acc, t| acc + (T::one() - *t).ln());
            return Ok(CbnPosterior {
                log_likelihood_o1: l1,
                log_likelihood_o2: l2,
                posterior: math::nb_posterior(&thetas)?,
            });
        }
        Ok(math::cbn_posterior(&self.groups(evidence)?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    O1,
    O2,
    Unknown,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceTelemetry {
    pub factors: usize,
    pub elicited: usize,
    pub label_initialized: usize,
    pub latents: Vec<String>,
    /// Latents whose conditionals came from label counts.
    pub count_fallbacks: usize,
    /// BMA weights `(nb, cbn)`, when that aggregator ran.
    pub bma_weights: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub condition_id: String,
    pub p_nb: Option<f64>,
    pub p_cbn: Option<f64>,
    pub p_final: Option<f64>,
    pub abstained: bool,
    pub decision: Decision,
    pub telemetry: InferenceTelemetry,
}

impl PosteriorReport {
    pub fn unknown(condition_id: impl Into<String>) -> Self {
        PosteriorReport {
            condition_id: condition_id.into(),
            p_nb: None,
            p_cbn: None,
            p_final: None,
            abstained: true,
            decision: Decision::Unknown,
            telemetry: InferenceTelemetry::default(),
        }
    }

    /// `P(O1 | C)`, if a probability was produced.
    pub fn p_o1(&self) -> Option<f64> {
        self.p_final
    }
}

/// Strength of one factor and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorEstimate {
    pub phi: f64,
    pub provenance: Provenance,
}

/// Label-based strengths: 0.75, 0.5 or 0.25. Unlabelled factors count as
/// neutral.
pub fn init_factor_priors_from_labels(factors: &[Factor]) -> BTreeMap<String, f64> {
    factors
        .iter()
        .map(|f| (f.id.clone(), label_prior(f.label.unwrap_or(FactorLabel::Neutral))))
        .collect()
}

/// Elicits `phi` for every factor, at most [`PHI_CHUNK`] per query. Values
/// are clamped to `[clamp, 1 - clamp]`; factors the model leaves out keep
/// their label prior.
pub fn elicit_factor_posteriors(
    gateway: &Gateway,
    scenario: &Scenario,
    factors: &[Factor],
    clamp: f64,
) -> Result<BTreeMap<String, FactorEstimate>> {
    if factors.is_empty() {
        return Err(Error::precondition("no factors to estimate"));
    }
    let priors = init_factor_priors_from_labels(factors);
    let requests: Vec<_> = factors
        .chunks(PHI_CHUNK)
        .map(|chunk| {
            let names: Vec<&str> = chunk.iter().map(|f| f.text.as_str()).collect();
            let prior_text = chunk
                .iter()
                .map(|f| format!("{}: {:.2}", f.text, priors[&f.id]))
                .collect::<Vec<_>>()
                .join("\n");
            gateway.request(
                PromptTag::PhiElicit,
                &[
                    ("scenario", &scenario.description),
                    ("outcome1", &scenario.outcome1),
                    ("outcome2", &scenario.outcome2),
                    ("prior_text", &prior_text),
                    ("factors", &serde_json::to_string(&names).expect("string list serializes")),
                ],
                0,
            )
        })
        .collect();

    let mut answered: BTreeMap<String, f64> = BTreeMap::new();
    for answer in gateway.ask_all(&requests, extract::probability_map) {
        match answer {
            Ok(Some(map)) => {
                answered.extend(map.into_iter().map(|(k, v)| (normalize_text(&k), v)));
            }
            Ok(None) => {}
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => log::warn!("strength elicitation failed: {e}"),
        }
    }

    factors
        .iter()
        .map(|f| {
            let estimate = match answered.get(&f.text) {
                Some(&p) => FactorEstimate {
                    phi: smooth_probability(p, clamp)?,
                    provenance: Provenance::Elicited,
                },
                None => FactorEstimate {
                    phi: smooth_probability(priors[&f.id], clamp)?,
                    provenance: Provenance::LabelInitialized,
                },
            };
            Ok((f.id.clone(), estimate))
        })
        .collect()
}

/// Partitions `factors` into named latents.
///
/// A factor named under several latents stays with the first; names the
/// model invents are dropped; factors it leaves out go to
/// [`RESIDUAL_LATENT`]. An unusable answer puts everything under
/// [`ALL_LATENT`].
pub fn discover_latents(gateway: &Gateway, factors: &[Factor]) -> Result<Vec<(String, Vec<Factor>)>> {
    if factors.is_empty() {
        return Err(Error::precondition("no factors to group"));
    }
    let names: Vec<&str> = factors.iter().map(|f| f.text.as_str()).collect();
    let listed = serde_json::to_string(&names).expect("string list serializes");
    let request = gateway.request(PromptTag::LatentDiscover, &[("factors", &listed)], 0);
    let proposed = match gateway.ask(&request, extract::latents) {
        Ok(Some(latents)) => latents,
        Ok(None) => Vec::new(),
        Err(e) if e.is_fatal() => return Err(e.into()),
        Err(e) => {
            log::warn!("latent discovery failed: {e}");
            Vec::new()
        }
    };
    if proposed.is_empty() {
        return Ok(vec![(ALL_LATENT.to_string(), factors.to_vec())]);
    }
    Ok(repair_partition(factors, proposed))
}

fn repair_partition(factors: &[Factor], proposed: Vec<(String, Vec<String>)>) -> Vec<(String, Vec<Factor>)> {
    let by_text: BTreeMap<&str, &Factor> = factors.iter().map(|f| (f.text.as_str(), f)).collect();
    let mut assigned = BTreeSet::new();
    let mut groups: Vec<(String, Vec<Factor>)> = Vec::new();
    for (name, members) in proposed {
        let mut picked = Vec::new();
        for m in members {
            if let Some(f) = by_text.get(normalize_text(&m).as_str()) {
                if assigned.insert(f.id.clone()) {
                    picked.push((*f).clone());
                }
            }
        }
        if picked.is_empty() {
            continue;
        }
        match groups.iter_mut().find(|(n, _)| *n == name) {
            Some((_, existing)) => existing.extend(picked),
            None => groups.push((name, picked)),
        }
    }
    let residual: Vec<Factor> = factors
        .iter()
        .filter(|f| !assigned.contains(&f.id))
        .cloned()
        .collect();
    if !residual.is_empty() {
        groups.push((RESIDUAL_LATENT.to_string(), residual));
    }
    groups
}

fn count_conditionals(members: &[Factor], epsilon: f64) -> Result<(f64, f64)> {
    let (mut c1, mut c2, mut cn) = (0.0, 0.0, 0.0);
    for f in members {
        match f.label.unwrap_or(FactorLabel::Neutral) {
            FactorLabel::SupportsO1 => c1 += 1.0,
            FactorLabel::SupportsO2 => c2 += 1.0,
            FactorLabel::Neutral => cn += 1.0,
        }
    }
    Ok(latent_cpt_from_counts(c1, c2, cn, epsilon)?)
}

/// Elicits `(P(L=1|O1), P(L=1|O2))` for each latent. Latents the model
/// skips fall back to smoothed label counts of their members. The second
/// value is the number of such fallbacks.
pub fn elicit_latent_conditionals(
    gateway: &Gateway,
    scenario: &Scenario,
    latents: &[(String, Vec<Factor>)],
    config: &PipelineConfig,
) -> Result<(Vec<LatentVariable<f64>>, usize)> {
    if latents.is_empty() {
        return Err(Error::precondition("no latents to estimate"));
    }
    let listed: Vec<serde_json::Value> = latents
        .iter()
        .map(|(name, members)| {
            let texts: Vec<&str> = members.iter().map(|f| f.text.as_str()).collect();
            serde_json::json!({ "name": name, "factors": texts })
        })
        .collect();
    let request = gateway.request(
        PromptTag::LatentElicit,
        &[
            ("latents", &serde_json::to_string(&listed).expect("latents serialize")),
            ("outcome1", &scenario.outcome1),
            ("outcome2", &scenario.outcome2),
        ],
        0,
    );
    let answered = match gateway.ask(&request, extract::pair_map) {
        Ok(Some(pairs)) => pairs,
        Ok(None) => BTreeMap::new(),
        Err(e) if e.is_fatal() => return Err(e.into()),
        Err(e) => {
            log::warn!("latent elicitation failed: {e}");
            BTreeMap::new()
        }
    };

    let clamp = config.inference.clamp;
    let mut fallbacks = 0;
    let mut out = Vec::with_capacity(latents.len());
    for (name, members) in latents {
        let (p1, p2) = match answered.get(name) {
            Some(&(p1, p2)) => (p1, p2),
            None => {
                fallbacks += 1;
                count_conditionals(members, config.inference.epsilon_smooth)?
            }
        };
        out.push(LatentVariable {
            name: name.clone(),
            members: members.iter().map(|f| f.id.clone()).collect(),
            p_given_o1: smooth_probability(p1, clamp)?,
            p_given_o2: smooth_probability(p2, clamp)?,
        });
    }
    Ok((out, fallbacks))
}

/// Aggregation, abstention threshold and decision for a pair of posteriors.
pub fn combine_posteriors(
    condition_id: &str,
    p_nb: f64,
    p_cbn: f64,
    config: &PipelineConfig,
) -> Result<PosteriorReport> {
    let cfg = &config.inference;
    let mut telemetry = InferenceTelemetry::default();
    let p_final = match cfg.aggregator {
        Aggregator::Lop => aggregate_lop(p_nb, p_cbn, cfg.w_nb, cfg.w_cbn)?,
        Aggregator::Bma => {
            let bma = aggregate_bma((p_nb, 1.0 - p_nb), (p_cbn, 1.0 - p_cbn))?;
            telemetry.bma_weights = Some((bma.weight_nb, bma.weight_cbn));
            bma.probability
        }
    };
    let abstained = p_final.max(1.0 - p_final) < cfg.tau;
    let decision = if abstained || p_final == 0.5 {
        Decision::Unknown
    } else if p_final > 0.5 {
        Decision::O1
    } else {
        Decision::O2
    };
    Ok(PosteriorReport {
        condition_id: condition_id.to_string(),
        p_nb: Some(p_nb),
        p_cbn: Some(p_cbn),
        p_final: Some(p_final),
        abstained,
        decision,
        telemetry,
    })
}

/// Full inference for one mapped condition.
pub fn infer(
    gateway: &Gateway,
    scenario: &Scenario,
    space: &FactorSpace,
    mapping: &MappingResult,
    config: &PipelineConfig,
) -> Result<PosteriorReport> {
    let factors: Vec<Factor> = mapping
        .final_set
        .iter()
        .filter_map(|id| space.factor(id).cloned())
        .collect();
    if mapping.abstained || factors.is_empty() {
        return Ok(PosteriorReport::unknown(&mapping.condition_id));
    }

    let estimates = elicit_factor_posteriors(gateway, scenario, &factors, config.inference.clamp)?;
    let params: BTreeMap<String, f64> = estimates.iter().map(|(id, e)| (id.clone(), e.phi)).collect();
    let evidence = EvidenceSet::new(params.keys().cloned());

    let groups = discover_latents(gateway, &factors)?;
    let (latents, count_fallbacks) = elicit_latent_conditionals(gateway, scenario, &groups, config)?;
    let latent_names = latents.iter().map(|l| l.name.clone()).collect();
    let model = LatentBayesModel::new(&scenario.id, params, latents)?;

    let p_nb = model.nb_posterior(&evidence)?;
    let p_cbn = model.cbn_posterior(&evidence)?.posterior;
    let mut report = combine_posteriors(&mapping.condition_id, p_nb, p_cbn, config)?;
    let elicited = estimates
        .values()
        .filter(|e| e.provenance == Provenance::Elicited)
        .count();
    report.telemetry = InferenceTelemetry {
        factors: factors.len(),
        elicited,
        label_initialized: factors.len() - elicited,
        latents: latent_names,
        count_fallbacks,
        ..report.telemetry
    };
    Ok(report)
}
