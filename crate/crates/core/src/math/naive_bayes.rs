use crate::scalar::{Field, Real};

use super::{out_of_range, DomainError};

fn check_thetas<T: Field>(thetas: &[T]) -> Result<(), DomainError> {
    match thetas.iter().find(|t| !t.in_open_unit_interval()) {
        Some(bad) => Err(out_of_range("factor likelihood", bad)),
        None => Ok(()),
    }
}

/// `(P(E | O1), P(E | O2))` under the symmetric channel `P(f | O1) = θ`,
/// `P(f | O2) = 1 - θ`.
pub fn nb_likelihoods<T: Field>(thetas: &[T]) -> Result<(T, T), DomainError> {
    check_thetas(thetas)?;
    Ok(thetas.iter().fold((T::one(), T::one()), |(a, b), t| {
        (a * t.clone(), b * (T::one() - t.clone()))
    }))
}

/// Naive Bayes posterior `P(O1 | E)` under a uniform outcome prior.
///
/// Accumulates the log-odds `Σ ln θ - ln(1 - θ)`, so long evidence lists do
/// not underflow. Empty evidence yields the prior.
pub fn nb_posterior<T: Real>(thetas: &[T]) -> Result<T, DomainError> {
    check_thetas(thetas)?;
    match thetas {
        [] => Ok(T::half()),
        // θ / (θ + (1 - θ)) is θ; skip the log round trip.
        [only] => Ok(*only),
        _ => {
            let log_odds = thetas
                .iter()
                .fold(T::zero(), |acc, &t| acc + t.ln() - (T::one() - t).ln());
            Ok(T::sigmoid(log_odds))
        }
    }
}
