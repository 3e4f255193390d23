use crate::scalar::Real;

use super::{out_of_range, DomainError};

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Linear opinion pool of the two model posteriors.
pub fn aggregate_lop<T: Real>(p_nb: T, p_cbn: T, w_nb: T, w_cbn: T) -> Result<T, DomainError> {
    if !p_nb.in_unit_interval() {
        return Err(out_of_range("naive Bayes posterior", &p_nb));
    }
    if !p_cbn.in_unit_interval() {
        return Err(out_of_range("network posterior", &p_cbn));
    }
    if !(w_nb >= T::zero() && w_cbn >= T::zero()) {
        return Err(DomainError::InvalidWeights(format!(
            "negative weight ({w_nb:?}, {w_cbn:?})"
        )));
    }
    if ((w_nb + w_cbn) - T::one()).abs() > T::lit(WEIGHT_TOLERANCE) {
        return Err(DomainError::InvalidWeights(format!(
            "weights ({w_nb:?}, {w_cbn:?}) do not sum to one"
        )));
    }
    let pooled = w_nb * p_nb + w_cbn * p_cbn;
    // rounding can step one ulp outside the convex hull
    Ok(pooled.max(p_nb.min(p_cbn)).min(p_nb.max(p_cbn)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmaOutcome<T> {
    pub weight_nb: T,
    pub weight_cbn: T,
    pub probability: T,
}

/// Model averaging with each model's evidence approximated by the product of
/// its two outcome posteriors. Pairs are `(P(O1 | E, M), P(O2 | E, M))`.
pub fn aggregate_bma<T: Real>(nb: (T, T), cbn: (T, T)) -> Result<BmaOutcome<T>, DomainError> {
    for (what, (a, b)) in [("naive Bayes pair", nb), ("network pair", cbn)] {
        if !a.in_unit_interval() || !b.in_unit_interval() {
            return Err(out_of_range(what, &(a, b)));
        }
        if ((a + b) - T::one()).abs() > T::lit(WEIGHT_TOLERANCE) {
            return Err(out_of_range(what, &(a, b)));
        }
    }
    // the uniform model prior cancels in the normalisation
    let e_nb = nb.0 * nb.1;
    let e_cbn = cbn.0 * cbn.1;
    let total = e_nb + e_cbn;
    if total <= T::zero() {
        return Err(DomainError::DegenerateEvidence);
    }
    let weight_nb = e_nb / total;
    let weight_cbn = e_cbn / total;
    let probability = (weight_nb * nb.0 + weight_cbn * cbn.0)
        .max(nb.0.min(cbn.0))
        .min(nb.0.max(cbn.0));
    Ok(BmaOutcome {
        weight_nb,
        weight_cbn,
        probability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lop_midpoint_and_boundaries() {
        assert!((aggregate_lop(0.8_f64, 0.6, 0.5, 0.5).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(aggregate_lop(0.83, 0.2, 1.0, 0.0).unwrap(), 0.83);
        assert_eq!(aggregate_lop(0.83, 0.2, 0.0, 1.0).unwrap(), 0.2);
        let p = aggregate_lop(0.9_f64, 0.5, 0.8, 0.2).unwrap();
        assert!((p - 0.82).abs() < 1e-15);
    }

    #[test]
    fn lop_rejects_bad_weights() {
        assert!(aggregate_lop(0.5, 0.5, 0.6, 0.6).is_err());
        assert!(aggregate_lop(0.5, 0.5, -0.1, 1.1).is_err());
        assert!(aggregate_lop(1.5, 0.5, 0.5, 0.5).is_err());
    }

    #[test]
    fn bma_hand_example() {
        // evidences 0.09 and 0.25 -> weights 0.09/0.34, 0.25/0.34
        let out = aggregate_bma((0.9_f64, 0.1), (0.5, 0.5)).unwrap();
        assert!((out.weight_nb - 0.09 / 0.34).abs() < 1e-15);
        assert!((out.weight_cbn - 0.25 / 0.34).abs() < 1e-15);
        assert!((out.probability - 0.605_882_352_941_176_5).abs() < 1e-12);
    }

    #[test]
    fn bma_symmetric_and_degenerate_cases() {
        let out = aggregate_bma((0.5, 0.5), (0.5, 0.5)).unwrap();
        assert_eq!((out.weight_nb, out.weight_cbn, out.probability), (0.5, 0.5, 0.5));
        let out = aggregate_bma((0.3, 0.7), (0.3, 0.7)).unwrap();
        assert_eq!(out.probability, 0.3);
        assert_eq!(aggregate_bma((1.0, 0.0), (0.0, 1.0)), Err(DomainError::DegenerateEvidence));
        assert!(aggregate_bma((0.6, 0.6), (0.5, 0.5)).is_err());
    }
}
