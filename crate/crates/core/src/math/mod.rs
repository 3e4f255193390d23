//! Probability kernel: closed forms for the naive Bayes and latent-group
//! network posteriors, count-based CPTs, diagnostics and opinion pooling.
//!
//! Everything here is a pure function of its arguments and generic over the
//! scalar type. Product-form identities take any [`Field`](crate::Field) so
//! they can be checked in exact rational arithmetic; log-space production
//! paths take a [`Real`](crate::Real).

mod aggregate;
mod elementary;
mod latent;
mod naive_bayes;

use thiserror::Error;

pub use aggregate::{aggregate_bma, aggregate_lop, BmaOutcome};
pub use elementary::{
    implied_lr_and_log_odds_bound, label_prior, latent_cpt_from_counts,
    self_consistency_error_bound, smooth_probability, LikelihoodRatioDiagnostics,
};
pub use latent::{
    cbn_likelihoods, cbn_posterior, cbn_posterior_bruteforce, outcome_cpt_from_latents,
    shared_latent_moments, CbnPosterior, GroupFactor, LatentGroup, SharedLatentMoments,
    MAX_BRUTEFORCE_FACTORS, MAX_BRUTEFORCE_LATENTS, MAX_OUTCOME_CPT_LATENTS,
};
pub use naive_bayes::{nb_likelihoods, nb_posterior};

/// Violation of a numeric precondition.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: String },
    #[error("outcome table needs 2^{k} rows; at most {max} latents are supported")]
    TooManyLatents { k: usize, max: usize },
    #[error("enumeration over {latents} latents and {factors} factors exceeds the brute-force guard")]
    EnumerationTooLarge { latents: usize, factors: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid aggregation weights: {0}")]
    InvalidWeights(String),
    #[error("both model evidences vanish")]
    DegenerateEvidence,
}

pub(crate) fn out_of_range<T: std::fmt::Debug>(what: &'static str, value: &T) -> DomainError {
    DomainError::OutOfRange {
        what,
        value: format!("{value:?}"),
    }
}
