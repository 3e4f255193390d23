use crate::domain::FactorLabel;
use crate::scalar::{Field, Real};

use super::{out_of_range, DomainError};

/// Clamps a probability into `[clamp, 1 - clamp]`.
pub fn smooth_probability<T: Field>(p: T, clamp: T) -> Result<T, DomainError> {
    if !p.in_unit_interval() {
        return Err(out_of_range("probability", &p));
    }
    if !(clamp > T::zero() && clamp < T::half()) {
        return Err(out_of_range("clamp", &clamp));
    }
    let upper = T::one() - clamp.clone();
    Ok(if p < clamp {
        clamp
    } else if p > upper {
        upper
    } else {
        p
    })
}

/// Label-initialised posterior `P(O1 | f)`: 3/4, 1/2 or 1/4.
pub fn label_prior<T: Field>(label: FactorLabel) -> T {
    let quarter = T::one() / (T::two() * T::two());
    match label {
        FactorLabel::SupportsO1 => T::one() - quarter,
        FactorLabel::Neutral => T::half(),
        FactorLabel::SupportsO2 => quarter,
    }
}

/// Latent conditionals from member label counts.
///
/// Neutral members are split evenly between the two outcomes and `epsilon`
/// is added to each side as a Laplace pseudo-count. Returns
/// `(P(L=1 | O1), P(L=1 | O2))`.
pub fn latent_cpt_from_counts<T: Field>(
    supports_o1: T,
    supports_o2: T,
    neutral: T,
    epsilon: T,
) -> Result<(T, T), DomainError> {
    for (what, c) in [
        ("supports_o1 count", &supports_o1),
        ("supports_o2 count", &supports_o2),
        ("neutral count", &neutral),
    ] {
        if *c < T::zero() {
            return Err(out_of_range(what, c));
        }
    }
    if epsilon <= T::zero() {
        return Err(out_of_range("laplace epsilon", &epsilon));
    }
    let split = neutral / T::two();
    let c1 = supports_o1 + split.clone() + epsilon.clone();
    let c2 = supports_o2 + split + epsilon;
    let total = c1.clone() + c2.clone();
    Ok((c1 / total.clone(), c2 / total))
}

/// Hoeffding bound on the error of an `m`-vote majority whose single votes
/// are correct with probability `q`: `exp(-2 m (q - 1/2)^2)`.
pub fn self_consistency_error_bound<T: Real>(m: u32, q: T) -> Result<T, DomainError> {
    if m == 0 {
        return Err(out_of_range("vote count", &m));
    }
    if !(q > T::half() && q <= T::one()) {
        return Err(out_of_range("single-vote accuracy", &q));
    }
    let gap = q - T::half();
    let m = T::from_u32(m).expect("vote count representable");
    Ok((-(T::two() * m * gap * gap)).exp())
}

/// Likelihood ratios implied by elicited posteriors, with the log-odds error
/// bound against reference ratios when those are known.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodRatioDiagnostics<T> {
    pub ratios: Vec<T>,
    pub log_odds_bound: Option<T>,
}

pub fn implied_lr_and_log_odds_bound<T: Real>(
    phis: &[T],
    true_ratios: Option<&[T]>,
) -> Result<LikelihoodRatioDiagnostics<T>, DomainError> {
    let ratios = phis
        .iter()
        .map(|&phi| {
            if phi.in_open_unit_interval() {
                Ok(phi / (T::one() - phi))
            } else {
                Err(out_of_range("posterior", &phi))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let log_odds_bound = match true_ratios {
        None => None,
        Some(reference) => {
            if reference.len() != ratios.len() {
                return Err(DomainError::LengthMismatch {
                    expected: ratios.len(),
                    got: reference.len(),
                });
            }
            let mut bound = T::zero();
            for (&lr, &lr_true) in ratios.iter().zip(reference) {
                if lr_true.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) || !lr_true.is_finite() {
                    return Err(out_of_range("reference likelihood ratio", &lr_true));
                }
                bound = bound + (lr.ln() - lr_true.ln()).abs();
            }
            Some(bound)
        }
    };
    Ok(LikelihoodRatioDiagnostics {
        ratios,
        log_odds_bound,
    })
}
