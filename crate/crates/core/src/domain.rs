//! Core records shared by every pipeline stage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Length of the hex prefix used for content-derived ids.
const ID_HEX_LEN: usize = 16;

/// Case-folds, collapses internal whitespace and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn content_id(prefix: &str, text: &str) -> String {
    let digest = Sha256::digest(normalize_text(text).as_bytes());
    let hex = hex::encode(digest);
    format!("{prefix}{}", &hex[..ID_HEX_LEN])
}

/// Id of the factor whose normalized text is `text`.
pub fn factor_id(text: &str) -> String {
    content_id("f", text)
}

/// Id of a condition with the given text.
pub fn condition_id(text: &str) -> String {
    content_id("u", text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    /// Free-form description; empty for bare claims.
    #[serde(default)]
    pub description: String,
    pub outcome1: String,
    pub outcome2: String,
}

impl Scenario {
    pub fn new(
        id: impl Into<String>,
        description: impl Into<String>,
        outcome1: impl Into<String>,
        outcome2: impl Into<String>,
    ) -> Result<Self> {
        let scenario = Scenario {
            id: id.into(),
            description: description.into(),
            outcome1: outcome1.into(),
            outcome2: outcome2.into(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::precondition("scenario id is empty"));
        }
        let (a, b) = (normalize_text(&self.outcome1), normalize_text(&self.outcome2));
        if a.is_empty() || b.is_empty() {
            return Err(Error::precondition(format!(
                "scenario {}: outcome text is empty",
                self.id
            )));
        }
        if a == b {
            return Err(Error::precondition(format!(
                "scenario {}: outcomes are identical",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub id: String,
    pub text: String,
    pub scenario_id: String,
}

impl Condition {
    /// Condition whose id is derived from its text.
    pub fn new(text: impl Into<String>, scenario_id: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::precondition("condition text is empty"));
        }
        Ok(Condition {
            id: condition_id(&text),
            text,
            scenario_id: scenario_id.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorLabel {
    SupportsO1,
    SupportsO2,
    Neutral,
}

impl fmt::Display for FactorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FactorLabel::SupportsO1 => "Outcome1",
            FactorLabel::SupportsO2 => "Outcome2",
            FactorLabel::Neutral => "Neutral",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Elicited,
    LabelInitialized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub id: String,
    pub text: String,
    pub label: Option<FactorLabel>,
    /// `P(O1 | f)` once elicited or initialised from the label.
    pub phi: Option<f64>,
    pub provenance: Provenance,
}

impl Factor {
    /// Unlabelled factor; `None` when the text normalizes to nothing.
    pub fn from_text(text: &str) -> Option<Self> {
        let text = normalize_text(text);
        if text.is_empty() {
            return None;
        }
        Some(Factor {
            id: factor_id(&text),
            text,
            label: None,
            phi: None,
            provenance: Provenance::LabelInitialized,
        })
    }

    pub fn with_label(mut self, label: FactorLabel) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorCluster {
    pub theme: String,
    pub members: Vec<String>,
    pub prototype: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceStats {
    pub rounds_used: u32,
    pub factors_generated: usize,
    pub clusters_found: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpace {
    pub scenario_id: String,
    pub clusters: Vec<FactorCluster>,
    pub unclustered: BTreeSet<String>,
    pub factors: BTreeMap<String, Factor>,
    pub stats: SpaceStats,
}

impl FactorSpace {
    pub fn empty(scenario_id: impl Into<String>) -> Self {
        FactorSpace {
            scenario_id: scenario_id.into(),
            clusters: Vec::new(),
            unclustered: BTreeSet::new(),
            factors: BTreeMap::new(),
            stats: SpaceStats::default(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn factor(&self, id: &str) -> Option<&Factor> {
        self.factors.get(id)
    }

    /// Looks a factor up by (normalized) text.
    pub fn find_by_text(&self, text: &str) -> Option<&Factor> {
        self.factors.get(&factor_id(text))
    }
}

/// Lists every broken [`FactorSpace`] invariant, naming the offending id.
pub fn validate_factor_space(space: &FactorSpace) -> Vec<String> {
    let mut violations = Vec::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    let mut reported: BTreeSet<&str> = BTreeSet::new();

    for (i, cluster) in space.clusters.iter().enumerate() {
        if cluster.members.is_empty() {
            violations.push(format!("empty cluster: {} (#{i})", cluster.theme));
        }
    }
    let referenced = space
        .clusters
        .iter()
        .flat_map(|c| c.members.iter())
        .chain(space.unclustered.iter());
    for id in referenced {
        if !space.factors.contains_key(id) && reported.insert(id) {
            violations.push(format!("dangling reference: {id}"));
        }
        if !seen.insert(id) && reported.insert(id) {
            violations.push(format!("duplicate membership: {id}"));
        }
    }
    for (key, factor) in &space.factors {
        if key != &factor.id {
            violations.push(format!("key mismatch: {key}"));
        }
        if !seen.contains(key.as_str()) {
            violations.push(format!("unassigned factor: {key}"));
        }
    }
    violations
}

const SPACE_FORMAT: &str = "anchor.factor-space";
const SPACE_VERSION: u32 = 1;

/// Self-describing persisted form of a factor space plus the pool it was
/// built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDocument {
    pub format: String,
    pub version: u32,
    pub scenario: Scenario,
    pub space: FactorSpace,
    /// Every factor that survived abduction, in generation order.
    #[serde(default)]
    pub pool: Vec<Factor>,
}

impl SpaceDocument {
    pub fn new(scenario: Scenario, space: FactorSpace, pool: Vec<Factor>) -> Self {
        SpaceDocument {
            format: SPACE_FORMAT.to_string(),
            version: SPACE_VERSION,
            scenario,
            space,
            pool,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpaceDocument = serde_json::from_str(text)?;
        if doc.format != SPACE_FORMAT {
            return Err(Error::precondition(format!(
                "unknown document format {:?}",
                doc.format
            )));
        }
        if doc.version != SPACE_VERSION {
            return Err(Error::precondition(format!(
                "unsupported factor-space version {}",
                doc.version
            )));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factor(text: &str) -> Factor {
        Factor::from_text(text).unwrap().with_label(FactorLabel::Neutral)
    }

    fn two_cluster_space() -> (FactorSpace, Vec<String>) {
        let fs: Vec<Factor> = ["a", "b", "c", "d"].iter().map(|t| factor(t)).collect();
        let ids: Vec<String> = fs.iter().map(|f| f.id.clone()).collect();
        let space = FactorSpace {
            scenario_id: "s".into(),
            clusters: vec![
                FactorCluster {
                    theme: "one".into(),
                    members: ids[..2].to_vec(),
                    prototype: None,
                },
                FactorCluster {
                    theme: "two".into(),
                    members: ids[2..].to_vec(),
                    prototype: Some(vec![0.1, 0.2]),
                },
            ],
            unclustered: BTreeSet::new(),
            factors: fs.into_iter().map(|f| (f.id.clone(), f)).collect(),
            stats: SpaceStats::default(),
        };
        (space, ids)
    }

    #[test]
    fn normalization_folds_case_and_whitespace() {
        assert_eq!(normalize_text("  Pace \t  CONSISTENCY\n"), "pace consistency");
        assert_eq!(factor_id("X"), factor_id("x "));
        assert_ne!(factor_id("x"), factor_id("y"));
        assert!(Factor::from_text("   ").is_none());
    }

    #[test]
    fn scenario_rejects_identical_outcomes() {
        assert!(Scenario::new("s", "", "Hot wins", "hot   WINS").is_err());
        assert!(Scenario::new("s", "", "Hot wins", "Warm wins").is_ok());
        assert!(Condition::new("  ", "s").is_err());
    }

    #[test]
    fn well_formed_space_has_no_violations() {
        let (space, _) = two_cluster_space();
        assert!(validate_factor_space(&space).is_empty());
    }

    #[test]
    fn duplicate_and_dangling_members_are_named() {
        let (mut space, ids) = two_cluster_space();
        space.clusters[1].members.push(ids[0].clone());
        assert_eq!(
            validate_factor_space(&space),
            vec![format!("duplicate membership: {}", ids[0])]
        );

        let (mut space, _) = two_cluster_space();
        space.unclustered.insert("f9".into());
        assert_eq!(validate_factor_space(&space), vec!["dangling reference: f9"]);
    }

    #[test]
    fn unassigned_and_empty_clusters_are_reported() {
        let (mut space, ids) = two_cluster_space();
        space.clusters[0].members.retain(|m| m != &ids[1]);
        space.clusters.push(FactorCluster {
            theme: "none".into(),
            members: vec![],
            prototype: None,
        });
        let v = validate_factor_space(&space);
        assert!(v.contains(&format!("unassigned factor: {}", ids[1])));
        assert!(v.iter().any(|s| s.starts_with("empty cluster: none")));
    }

    #[test]
    fn document_round_trip() {
        let (mut space, _) = two_cluster_space();
        space.factors.values_mut().next().unwrap().phi = Some(0.1 + 0.2);
        let scenario = Scenario::new("s", "d", "o1", "o2").unwrap();
        let doc = SpaceDocument::new(scenario, space, vec![factor("a")]);
        let back = SpaceDocument::from_json(&doc.to_json().unwrap()).unwrap();
        assert_eq!(back, doc);
    }
}
