//! Pipeline hyperparameters, loadable from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbductionConfig {
    pub n_target: usize,
    pub batch: usize,
    pub max_rounds: u32,
    /// Label votes per factor; must be odd.
    pub label_votes: u32,
}

impl Default for AbductionConfig {
    fn default() -> Self {
        AbductionConfig {
            n_target: 80,
            batch: 10,
            max_rounds: 20,
            label_votes: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub k1: usize,
    pub k2: usize,
    /// Theme weight in the cluster prototype.
    pub alpha: f64,
    pub rounds: u32,
    pub vote_ratio: f64,
    /// Seed for the candidate presentation order.
    pub seed: u64,
}

impl Default for MappingConfig {
    fn default() -> Self {
        MappingConfig {
            k1: 3,
            k2: 5,
            alpha: 0.5,
            rounds: 3,
            vote_ratio: 0.5,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Aggregator {
    Lop,
    Bma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    /// Laplace pseudo-count for count-based latent tables.
    pub epsilon_smooth: f64,
    /// Every elicited probability is clamped into `[clamp, 1 - clamp]`.
    pub clamp: f64,
    /// Abstain when `max(p, 1 - p) < tau`.
    pub tau: f64,
    pub w_nb: f64,
    pub w_cbn: f64,
    pub aggregator: Aggregator,
    /// Total attempts per structured query before falling back.
    pub elicit_retries: u32,
    pub temperature: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            epsilon_smooth: 0.5,
            clamp: 0.01,
            tau: 0.0,
            w_nb: 0.5,
            w_cbn: 0.5,
            aggregator: Aggregator::Lop,
            elicit_retries: 20,
            temperature: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    pub tau_dec: f64,
    /// Posterior gap below which two contexts count as the same.
    pub eps_same: f64,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            tau_dec: 0.9,
            eps_same: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionBackend {
    Pca,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterBackend {
    Hdbscan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructuringConfig {
    /// When off, every factor lands in a single "default" cluster.
    pub clustering: bool,
    pub reduction: ReductionBackend,
    pub cluster_backend: ClusterBackend,
}

impl Default for StructuringConfig {
    fn default() -> Self {
        StructuringConfig {
            clustering: true,
            reduction: ReductionBackend::Pca,
            cluster_backend: ClusterBackend::Hdbscan,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// In-flight model requests and concurrently processed scenarios.
    pub concurrency: usize,
    /// Directory of prompt template overrides.
    pub prompt_dir: Option<PathBuf>,
    /// Expected embedding width; inferred from the first response if unset.
    pub embedding_dim: Option<usize>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            concurrency: 4,
            prompt_dir: None,
            embedding_dim: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub abduction: AbductionConfig,
    pub mapping: MappingConfig,
    pub inference: InferenceConfig,
    pub decision: DecisionConfig,
    pub structuring: StructuringConfig,
    pub runtime: RuntimeConfig,
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl PipelineConfig {
    /// Shorter abduction budget used for long-context datasets.
    pub fn long_context() -> Self {
        PipelineConfig {
            abduction: AbductionConfig {
                n_target: 40,
                batch: 5,
                max_rounds: 10,
                ..AbductionConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.abduction;
        check(a.batch >= 1, || "abduction.batch must be positive".into())?;
        check(a.max_rounds >= 1, || "abduction.max_rounds must be positive".into())?;
        check(a.label_votes >= 1 && a.label_votes % 2 == 1, || {
            format!("abduction.label_votes must be odd, got {}", a.label_votes)
        })?;

        let m = &self.mapping;
        check(m.k1 >= 1 && m.k2 >= 1, || "mapping.k1 and mapping.k2 must be positive".into())?;
        check((0.0..=1.0).contains(&m.alpha), || {
            format!("mapping.alpha must lie in [0, 1], got {}", m.alpha)
        })?;
        check(m.rounds >= 1, || "mapping.rounds must be positive".into())?;
        check(m.vote_ratio > 0.0 && m.vote_ratio <= 1.0, || {
            format!("mapping.vote_ratio must lie in (0, 1], got {}", m.vote_ratio)
        })?;

        let i = &self.inference;
        check(i.epsilon_smooth > 0.0, || "inference.epsilon_smooth must be positive".into())?;
        check(i.clamp > 0.0 && i.clamp < 0.5, || {
            format!("inference.clamp must lie in (0, 0.5), got {}", i.clamp)
        })?;
        check((0.0..1.0).contains(&i.tau), || {
            format!("inference.tau must lie in [0, 1), got {}", i.tau)
        })?;
        for (name, w) in [("w_nb", i.w_nb), ("w_cbn", i.w_cbn)] {
            check((0.0..=1.0).contains(&w), || {
                format!("inference.{name} must lie in [0, 1], got {w}")
            })?;
        }
        if i.aggregator == Aggregator::Lop {
            check((i.w_nb + i.w_cbn - 1.0).abs() <= 1e-9, || {
                format!(
                    "inference.w_nb + inference.w_cbn must equal 1 for LOP, got {}",
                    i.w_nb + i.w_cbn
                )
            })?;
        }
        check(i.elicit_retries >= 1, || "inference.elicit_retries must be positive".into())?;
        check(i.temperature.is_finite() && i.temperature >= 0.0, || {
            "inference.temperature must be a non-negative number".into()
        })?;

        let d = &self.decision;
        check(d.tau_dec > 0.0 && d.tau_dec < 1.0, || {
            format!("decision.tau_dec must lie in (0, 1), got {}", d.tau_dec)
        })?;
        check(d.eps_same >= 0.0, || "decision.eps_same must be non-negative".into())?;

        check(self.runtime.concurrency >= 1, || "runtime.concurrency must be positive".into())?;
        check(self.runtime.embedding_dim != Some(0), || {
            "runtime.embedding_dim must be positive".into()
        })
    }

    /// Hex digest of the full configuration.
    pub fn digest(&self) -> String {
        digest_json(self)
    }

    /// Hex digest of the settings that shape a factor space.
    pub fn space_digest(&self) -> String {
        #[derive(Serialize)]
        struct SpaceKey<'a> {
            abduction: &'a AbductionConfig,
            structuring: &'a StructuringConfig,
            alpha: f64,
            elicit_retries: u32,
            temperature: f64,
            prompt_dir: &'a Option<PathBuf>,
        }
        digest_json(&SpaceKey {
            abduction: &self.abduction,
            structuring: &self.structuring,
            alpha: self.mapping.alpha,
            elicit_retries: self.inference.elicit_retries,
            temperature: self.inference.temperature,
            prompt_dir: &self.runtime.prompt_dir,
        })
    }
}

fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))[..16].to_string()
}
