//! Binary-outcome reasoning over LLM-elicited evidence.
//!
//! A scenario with two competing outcomes is expanded into a themed factor
//! space ([`abduction`], [`structuring`]). Each downstream condition is mapped
//! onto a small set of factors ([`mapping`]) and the mapped factors feed a
//! naive Bayes model and a latent-group Bayesian network whose posteriors are
//! pooled into one probability ([`inference`]). [`harness`] runs datasets
//! through the whole pipeline and scores the results.
//!
//! All model access goes through [`gateway::Gateway`], which also ships a
//! scripted world model and a hash embedder so the pipeline runs offline.

pub mod abduction;
pub mod config;
pub mod domain;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod inference;
pub mod mapping;
pub mod math;
pub mod scalar;
pub mod structuring;

pub use config::PipelineConfig;
pub use domain::{
    Condition, Factor, FactorCluster, FactorLabel, FactorSpace, Provenance, Scenario,
};
pub use error::{Error, Result};
pub use inference::{EvidenceSet, LatentBayesModel, LatentVariable, PosteriorReport};
pub use mapping::MappingResult;
pub use scalar::{Field, Real};

/// Probabilities as carried through the pipeline.
pub type Probability = f64;

/// Exact rational probability for checking closed forms.
pub type ExactProbability = num_rational::BigRational;

pub type BayesModel = LatentBayesModel<Probability>;
pub type ExactBayesModel = LatentBayesModel<ExactProbability>;
