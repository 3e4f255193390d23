//! Latent-group network `Outcome -> L_i -> f`.
//!
//! Each factor hangs off exactly one binary latent, each latent hangs off the
//! binary outcome. With evidence restricted to factors observed present, the
//! per-outcome likelihood factorises over latent groups:
//!
//! ```text
//! P(E | O_r) = Π_i [ α_i^r Π_{f ∈ E_i} θ_f + (1 - α_i^r) Π_{f ∈ E_i} (1 - θ_f) ]
//! ```
//!
//! Unobserved factors sum out to one and groups without observed members
//! contribute a factor of one to both outcomes.

use crate::scalar::{Field, Real};

use super::{out_of_range, DomainError};

pub const MAX_OUTCOME_CPT_LATENTS: usize = 20;
pub const MAX_BRUTEFORCE_LATENTS: usize = 10;
pub const MAX_BRUTEFORCE_FACTORS: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupFactor<T> {
    /// `P(f = 1 | L = 1)`; `P(f = 1 | L = 0) = 1 - theta`.
    pub theta: T,
    pub observed: bool,
}

/// One latent with its outcome-conditional activation probabilities and the
/// factors assigned to it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGroup<T> {
    /// `P(L = 1 | O1)`
    pub p_given_o1: T,
    /// `P(L = 1 | O2)`
    pub p_given_o2: T,
    pub factors: Vec<GroupFactor<T>>,
}

impl<T: Field> LatentGroup<T> {
    fn validate(&self) -> Result<(), DomainError> {
        for (what, p) in [
            ("P(L=1|O1)", &self.p_given_o1),
            ("P(L=1|O2)", &self.p_given_o2),
        ] {
            if !p.in_open_unit_interval() {
                return Err(out_of_range(what, p));
            }
        }
        match self.factors.iter().find(|f| !f.theta.in_open_unit_interval()) {
            Some(f) => Err(out_of_range("factor likelihood", &f.theta)),
            None => Ok(()),
        }
    }

    fn observed_thetas(&self) -> impl Iterator<Item = &T> {
        self.factors.iter().filter(|f| f.observed).map(|f| &f.theta)
    }
}

fn validate_groups<T: Field>(groups: &[LatentGroup<T>]) -> Result<(), DomainError> {
    groups.iter().try_for_each(LatentGroup::validate)
}

/// Per-group product form of `(P(E | O1), P(E | O2))`.
pub fn cbn_likelihoods<T: Field>(groups: &[LatentGroup<T>]) -> Result<(T, T), DomainError> {
    validate_groups(groups)?;
    let mut lik = (T::one(), T::one());
    for g in groups {
        let mut on = T::one();
        let mut off = T::one();
        let mut any = false;
        for t in g.observed_thetas() {
            on = on * t.clone();
            off = off * (T::one() - t.clone());
            any = true;
        }
        if !any {
            continue;
        }
        let term = |alpha: &T| alpha.clone() * on.clone() + (T::one() - alpha.clone()) * off.clone();
        lik.0 = lik.0 * term(&g.p_given_o1);
        lik.1 = lik.1 * term(&g.p_given_o2);
    }
    Ok(lik)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbnPosterior<T> {
    pub log_likelihood_o1: T,
    pub log_likelihood_o2: T,
    /// `P(O1 | E)` under a uniform outcome prior.
    pub posterior: T,
}

impl<T: Real> CbnPosterior<T> {
    pub fn likelihoods(&self) -> (T, T) {
        (self.log_likelihood_o1.exp(), self.log_likelihood_o2.exp())
    }
}

/// Exact latent-marginalised posterior, accumulated in log space.
pub fn cbn_posterior<T: Real>(groups: &[LatentGroup<T>]) -> Result<CbnPosterior<T>, DomainError> {
    validate_groups(groups)?;
    let mut l1 = T::zero();
    let mut l2 = T::zero();
    for g in groups {
        let mut log_on = T::zero();
        let mut log_off = T::zero();
        let mut any = false;
        for &t in g.observed_thetas() {
            log_on = log_on + t.ln();
            log_off = log_off + (T::one() - t).ln();
            any = true;
        }
        if !any {
            continue;
        }
        let term = |alpha: T| T::log_add_exp(alpha.ln() + log_on, (T::one() - alpha).ln() + log_off);
        l1 = l1 + term(g.p_given_o1);
        l2 = l2 + term(g.p_given_o2);
    }
    Ok(CbnPosterior {
        log_likelihood_o1: l1,
        log_likelihood_o2: l2,
        posterior: T::sigmoid(l1 - l2),
    })
}

/// Reference posterior by literal enumeration of the joint
/// `P(O) Π P(L_i | O) Π P(f_j | L_π(j))` over every latent assignment and
/// every value of every unobserved factor.
pub fn cbn_posterior_bruteforce<T: Field>(groups: &[LatentGroup<T>]) -> Result<T, DomainError> {
    validate_groups(groups)?;
    let k = groups.len();
    let n_factors: usize = groups.iter().map(|g| g.factors.len()).sum();
    if k > MAX_BRUTEFORCE_LATENTS || n_factors > MAX_BRUTEFORCE_FACTORS {
        return Err(DomainError::EnumerationTooLarge {
            latents: k,
            factors: n_factors,
        });
    }
    // (latent index, theta, observed) in a flat list
    let flat: Vec<(usize, &T, bool)> = groups
        .iter()
        .enumerate()
        .flat_map(|(i, g)| g.factors.iter().map(move |f| (i, &f.theta, f.observed)))
        .collect();
    let hidden: Vec<usize> = (0..flat.len()).filter(|&j| !flat[j].2).collect();

    let joint_for = |outcome_one: bool| -> T {
        let mut total = T::zero();
        for latent_mask in 0u32..(1u32 << k) {
            let mut p_latents = T::half();
            for (i, g) in groups.iter().enumerate() {
                let alpha = if outcome_one { &g.p_given_o1 } else { &g.p_given_o2 };
                p_latents = p_latents
                    * if latent_mask >> i & 1 == 1 {
                        alpha.clone()
                    } else {
                        T::one() - alpha.clone()
                    };
            }
            for hidden_mask in 0u32..(1u32 << hidden.len()) {
                let mut p = p_latents.clone();
                let mut h = 0usize;
                for (j, &(parent, theta, observed)) in flat.iter().enumerate() {
                    let value = if observed {
                        true
                    } else {
                        debug_assert_eq!(hidden[h], j);
                        let v = hidden_mask >> h & 1 == 1;
                        h += 1;
                        v
                    };
                    let p_on = if latent_mask >> parent & 1 == 1 {
                        theta.clone()
                    } else {
                        T::one() - theta.clone()
                    };
                    p = p * if value { p_on } else { T::one() - p_on };
                }
                total = total + p;
            }
        }
        total
    };
    let j1 = joint_for(true);
    let j2 = joint_for(false);
    Ok(j1.clone() / (j1 + j2))
}

/// Table of `P(O1 | L = ℓ)` for every `ℓ ∈ {0,1}^k`, indexed by the bitmask
/// with bit `i` holding `ℓ_i`. Input pairs are `(P(L_i=1|O1), P(L_i=1|O2))`.
pub fn outcome_cpt_from_latents<T: Field>(latents: &[(T, T)]) -> Result<Vec<T>, DomainError> {
    let k = latents.len();
    if k > MAX_OUTCOME_CPT_LATENTS {
        return Err(DomainError::TooManyLatents {
            k,
            max: MAX_OUTCOME_CPT_LATENTS,
        });
    }
    for (a, b) in latents {
        for p in [a, b] {
            if !p.in_open_unit_interval() {
                return Err(out_of_range("latent conditional", p));
            }
        }
    }
    let rows = (0..1usize << k)
        .map(|mask| {
            let (mut a, mut b) = (T::one(), T::one());
            for (i, (p1, p2)) in latents.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    a = a * p1.clone();
                    b = b * p2.clone();
                } else {
                    a = a * (T::one() - p1.clone());
                    b = b * (T::one() - p2.clone());
                }
            }
            a.clone() / (a + b)
        })
        .collect();
    Ok(rows)
}

/// Moments of two factors sharing one latent parent under a fixed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedLatentMoments<T> {
    /// `P(f_a = 1, f_b = 1 | O)`
    pub joint: T,
    pub marginal_a: T,
    pub marginal_b: T,
    /// `β(1-β)(2θ_a-1)(2θ_b-1)`
    pub covariance: T,
}

pub fn shared_latent_moments<T: Field>(
    beta: T,
    theta_a: T,
    theta_b: T,
) -> Result<SharedLatentMoments<T>, DomainError> {
    for (what, p) in [("beta", &beta), ("theta_a", &theta_a), ("theta_b", &theta_b)] {
        if !p.in_open_unit_interval() {
            return Err(out_of_range(what, p));
        }
    }
    let one = T::one;
    let off_a = one() - theta_a.clone();
    let off_b = one() - theta_b.clone();
    let not_beta = one() - beta.clone();
    Ok(SharedLatentMoments {
        joint: beta.clone() * theta_a.clone() * theta_b.clone()
            + not_beta.clone() * off_a.clone() * off_b.clone(),
        marginal_a: beta.clone() * theta_a.clone() + not_beta.clone() * off_a,
        marginal_b: beta.clone() * theta_b.clone() + not_beta.clone() * off_b,
        covariance: beta
            * not_beta
            * (T::two() * theta_a - one())
            * (T::two() * theta_b - one()),
    })
}
