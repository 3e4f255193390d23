//! Scalar abstractions for the probability kernel.
//!
//! Closed forms that only need field operations (products, ratios, sums) are
//! written against [`Field`] so they can be evaluated in exact rational
//! arithmetic as well as in floating point. Anything that needs logarithms or
//! tolerances is written against [`Real`].

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, Num};

/// Arithmetic needed by the product-form probability identities.
pub trait Field: Num + Clone + PartialOrd + Debug {
    fn two() -> Self {
        Self::one() + Self::one()
    }

    fn half() -> Self {
        Self::one() / Self::two()
    }

    /// `true` when the value lies in the closed unit interval.
    fn in_unit_interval(&self) -> bool {
        *self >= Self::zero() && *self <= Self::one()
    }

    /// `true` when the value lies in the open unit interval.
    fn in_open_unit_interval(&self) -> bool {
        *self > Self::zero() && *self < Self::one()
    }
}

impl<T: Num + Clone + PartialOrd + Debug> Field for T {}

/// Floating-point scalar: f32 or f64.
pub trait Real: Field + Float + FromPrimitive + Copy {
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// `ln(exp(a) + exp(b))` without overflow.
    fn log_add_exp(a: Self, b: Self) -> Self {
        if a == Self::neg_infinity() {
            return b;
        }
        if b == Self::neg_infinity() {
            return a;
        }
        let m = a.max(b);
        m + ((a - m).exp() + (b - m).exp()).ln()
    }

    /// Maps a log-odds value to a probability.
    fn sigmoid(x: Self) -> Self {
        if x >= Self::zero() {
            Self::one() / (Self::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (Self::one() + e)
        }
    }
}

impl<T: Field + Float + FromPrimitive + Copy> Real for T {}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::One;

    #[test]
    fn half_is_exact_in_rationals() {
        let h = BigRational::half();
        assert_eq!(h.clone() + h, BigRational::one());
    }

    #[test]
    fn log_add_exp_matches_direct() {
        let v = f64::log_add_exp(0.3f64.ln(), 0.5f64.ln());
        assert!((v.exp() - 0.8).abs() < 1e-15);
        assert_eq!(f64::log_add_exp(f64::NEG_INFINITY, 1.0), 1.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(f64::sigmoid(1000.0), 1.0);
        assert_eq!(f64::sigmoid(-1000.0), 0.0);
        assert!((f64::sigmoid(0.0) - 0.5).abs() < 1e-16);
    }
}
