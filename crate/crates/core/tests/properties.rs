use std::collections::{BTreeMap, BTreeSet};

use anchor_core::math::{
    aggregate_bma, aggregate_lop, cbn_likelihoods, cbn_posterior, cbn_posterior_bruteforce,
    latent_cpt_from_counts, nb_likelihoods, nb_posterior, outcome_cpt_from_latents,
    self_consistency_error_bound, shared_latent_moments, GroupFactor, LatentGroup,
};
use anchor_core::{BayesModel, EvidenceSet, ExactProbability, LatentVariable};
use num_traits::One;
use proptest::prelude::*;

fn prob() -> impl Strategy<Value = f64> {
    0.02f64..0.98
}

fn exact(x: f64) -> ExactProbability {
    ExactProbability::from_float(x).unwrap()
}

fn group() -> impl Strategy<Value = LatentGroup<f64>> {
    (prob(), prob(), prop::collection::vec((prob(), any::<bool>()), 0..4)).prop_map(|(a1, a2, fs)| {
        LatentGroup {
            p_given_o1: a1,
            p_given_o2: a2,
            factors: fs
                .into_iter()
                .map(|(theta, observed)| GroupFactor { theta, observed })
                .collect(),
        }
    })
}

fn groups() -> impl Strategy<Value = Vec<LatentGroup<f64>>> {
    prop::collection::vec(group(), 1..=4)
        .prop_filter("at most ten factors", |gs| gs.iter().map(|g| g.factors.len()).sum::<usize>() <= 10)
}

fn small_groups() -> impl Strategy<Value = Vec<LatentGroup<f64>>> {
    prop::collection::vec(group(), 1..=3)
        .prop_filter("at most six factors", |gs| gs.iter().map(|g| g.factors.len()).sum::<usize>() <= 6)
}

fn to_exact(groups: &[LatentGroup<f64>]) -> Vec<LatentGroup<ExactProbability>> {
    groups
        .iter()
        .map(|g| LatentGroup {
            p_given_o1: exact(g.p_given_o1),
            p_given_o2: exact(g.p_given_o2),
            factors: g
                .factors
                .iter()
                .map(|f| GroupFactor {
                    theta: exact(f.theta),
                    observed: f.observed,
                })
                .collect(),
        })
        .collect()
}

fn to_f64(x: &ExactProbability) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn cbn_matches_enumeration(gs in groups()) {
        let closed = cbn_posterior(&gs).unwrap().posterior;
        let brute = cbn_posterior_bruteforce(&gs).unwrap();
        prop_assert!((closed - brute).abs() <= 1e-9, "{closed} vs {brute}");
    }

    #[test]
    fn swapping_latent_conditionals_mirrors_posterior(gs in groups()) {
        let swapped: Vec<_> = gs
            .iter()
            .map(|g| LatentGroup { p_given_o1: g.p_given_o2, p_given_o2: g.p_given_o1, factors: g.factors.clone() })
            .collect();
        let p = cbn_posterior(&gs).unwrap().posterior;
        let q = cbn_posterior(&swapped).unwrap().posterior;
        prop_assert!((p + q - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn nb_matches_direct_product(thetas in prop::collection::vec(prob(), 1..12)) {
        let num: f64 = thetas.iter().product();
        let den = num + thetas.iter().map(|t| 1.0 - t).product::<f64>();
        prop_assert!((nb_posterior(&thetas).unwrap() - num / den).abs() <= 1e-12);
        let exact_thetas: Vec<_> = thetas.iter().map(|&t| exact(t)).collect();
        let (a, b) = nb_likelihoods(&exact_thetas).unwrap();
        prop_assert!((to_f64(&(a.clone() / (a + b))) - nb_posterior(&thetas).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn nb_complement_symmetry(thetas in prop::collection::vec(prob(), 1..12)) {
        let flipped: Vec<f64> = thetas.iter().map(|t| 1.0 - t).collect();
        let p = nb_posterior(&thetas).unwrap();
        prop_assert!((p + nb_posterior(&flipped).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn nb_is_monotone_in_each_theta(thetas in prop::collection::vec(prob(), 1..8), i in 0usize..8, bump in 0.001f64..0.01) {
        let i = i % thetas.len();
        let mut raised = thetas.clone();
        raised[i] = (raised[i] + bump).min(0.99);
        prop_assert!(nb_posterior(&raised).unwrap() >= nb_posterior(&thetas).unwrap());
    }

    #[test]
    fn lop_brackets_inputs(p in 0.0f64..=1.0, q in 0.0f64..=1.0, w in 0.0f64..=1.0) {
        let r = aggregate_lop(p, q, w, 1.0 - w).unwrap();
        prop_assert!(p.min(q) <= r && r <= p.max(q));
        prop_assert_eq!(aggregate_lop(p, q, 1.0, 0.0).unwrap(), p);
    }

    #[test]
    fn bma_brackets_inputs(p in 0.01f64..0.99, q in 0.01f64..0.99) {
        let out = aggregate_bma((p, 1.0 - p), (q, 1.0 - q)).unwrap();
        prop_assert!(p.min(q) <= out.probability && out.probability <= p.max(q));
        prop_assert!((out.weight_nb + out.weight_cbn - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn outcome_table_rows_are_bayes_ratios(pairs in prop::collection::vec((prob(), prob()), 1..=4)) {
        let exact_pairs: Vec<_> = pairs.iter().map(|&(a, b)| (exact(a), exact(b))).collect();
        let table = outcome_cpt_from_latents(&exact_pairs).unwrap();
        prop_assert_eq!(table.len(), 1 << pairs.len());
        for (mask, row) in table.iter().enumerate() {
            let (mut a, mut b) = (ExactProbability::one(), ExactProbability::one());
            for (i, (p1, p2)) in exact_pairs.iter().enumerate() {
                if mask >> i & 1 == 1 {
                    a *= p1.clone();
                    b *= p2.clone();
                } else {
                    a *= ExactProbability::one() - p1;
                    b *= ExactProbability::one() - p2;
                }
            }
            let o1 = a.clone() / (a.clone() + b.clone());
            let o2 = b.clone() / (a + b);
            prop_assert_eq!(row, &o1);
            prop_assert_eq!(o1 + o2, ExactProbability::one());
        }
    }

    #[test]
    fn uninformative_latents_cancel(pairs in prop::collection::vec((prob(), prob()), 1..=3), neutral in prob()) {
        let exact_pairs: Vec<_> = pairs.iter().map(|&(a, b)| (exact(a), exact(b))).collect();
        let mut extended = exact_pairs.clone();
        extended.push((exact(neutral), exact(neutral)));
        let base = outcome_cpt_from_latents(&exact_pairs).unwrap();
        let wide = outcome_cpt_from_latents(&extended).unwrap();
        let k = pairs.len();
        for (mask, row) in base.iter().enumerate() {
            prop_assert_eq!(&wide[mask], row);
            prop_assert_eq!(&wide[mask | 1 << k], row);
        }
    }

    #[test]
    fn covariance_matches_enumerated_joint(beta in prob(), ta in prob(), tb in prob()) {
        let m = shared_latent_moments(exact(beta), exact(ta), exact(tb)).unwrap();
        prop_assert_eq!(m.joint - m.marginal_a * m.marginal_b, m.covariance);
    }

    #[test]
    fn count_cpts_are_probabilities(o1 in 0u32..20, o2 in 0u32..20, n in 0u32..20, eps in 0.01f64..2.0) {
        let (a, b) = latent_cpt_from_counts(o1 as f64, o2 as f64, n as f64, eps).unwrap();
        prop_assert!(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0);
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
        prop_assert_eq!(o1 >= o2, a >= b);
    }

    #[test]
    fn error_bound_decreases(m in 1u32..50, q in 0.51f64..0.99) {
        let here = self_consistency_error_bound(m, q).unwrap();
        prop_assert!(self_consistency_error_bound(m + 1, q).unwrap() < here);
        prop_assert!(self_consistency_error_bound(m, (q + 0.005).min(1.0)).unwrap() < here);
        prop_assert!(here > 0.0 && here < 1.0);
    }

    #[test]
    fn model_posteriors_agree_with_enumeration(
        thetas in prop::collection::vec(prob(), 1..=10),
        assignment in prop::collection::vec(0usize..4, 10),
        alphas in prop::collection::vec((prob(), prob()), 4),
        observed in prop::collection::vec(any::<bool>(), 10),
    ) {
        let ids: Vec<String> = (0..thetas.len()).map(|i| format!("f{i}")).collect();
        let params: BTreeMap<String, f64> = ids.iter().cloned().zip(thetas.iter().copied()).collect();
        let mut members: BTreeMap<usize, BTreeSet<String>> = BTreeMap::new();
        for (i, id) in ids.iter().enumerate() {
            members.entry(assignment[i]).or_default().insert(id.clone());
        }
        let latents = members
            .into_iter()
            .map(|(k, m)| LatentVariable { name: format!("L{k}"), members: m, p_given_o1: alphas[k].0, p_given_o2: alphas[k].1 })
            .collect();
        let model = BayesModel::new("s", params, latents).unwrap();
        let evidence = EvidenceSet::new(ids.iter().zip(&observed).filter(|(_, &o)| o).map(|(id, _)| id.clone()));
        let closed = model.cbn_posterior(&evidence).unwrap().posterior;
        let brute = model.cbn_posterior_bruteforce(&evidence).unwrap();
        prop_assert!((closed - brute).abs() <= 1e-9);
        let active: Vec<f64> = ids.iter().zip(&thetas).zip(&observed).filter(|(_, &o)| o).map(|((_, &t), _)| t).collect();
        let nb = model.nb_posterior(&evidence).unwrap();
        let expected = if active.is_empty() { 0.5 } else { nb_posterior(&active).unwrap() };
        prop_assert!((nb - expected).abs() <= 1e-12);
    }
}

proptest! {
    // exact enumeration is slow in big rationals
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cbn_product_form_is_exact(gs in small_groups()) {
        let eg = to_exact(&gs);
        let (l1, l2) = cbn_likelihoods(&eg).unwrap();
        let brute = cbn_posterior_bruteforce(&eg).unwrap();
        prop_assert_eq!(l1.clone() / (l1 + l2), brute.clone());
        let closed = cbn_posterior(&gs).unwrap().posterior;
        prop_assert!((closed - to_f64(&brute)).abs() <= 1e-12);
    }
}

#[test]
fn single_factor_posterior_is_its_theta() {
    for t in [0.1, 0.25, 0.5, 0.7, 0.9, 0.999] {
        assert_eq!(nb_posterior(&[t]).unwrap(), t);
    }
}
