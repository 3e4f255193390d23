use anchor_core::gateway::mock::HashEmbedder;

#[test]
fn tokenisation() {
    assert_eq!(
        HashEmbedder::tokens("The Noodles are cooking in glass bowls!"),
        vec!["noodle", "cooking", "glass", "bowl"]
    );
    assert_eq!(HashEmbedder::tokens("the"), vec!["the"]);
}

#[test]
fn vectors_are_unit_length_and_stable() {
    let e = HashEmbedder::new(32);
    for text in ["temperature of water", "food safety", "x", ""] {
        let v = e.embed_one(text);
        assert_eq!(v.len(), 32);
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(v, e.embed_one(text));
    }
}

fn sparse(v: &[f64]) -> Vec<(usize, f64)> {
    v.iter().copied().enumerate().filter(|(_, x)| *x != 0.0).collect()
}

fn assert_sparse(v: &[f64], expected: &[(usize, f64)]) {
    let got = sparse(v);
    assert_eq!(got.len(), expected.len(), "{got:?}");
    for ((i, x), (j, y)) in got.iter().zip(expected) {
        assert_eq!(i, j);
        assert!((x - y).abs() < 1e-15, "{x} vs {y}");
    }
}

// reference values from an independent SHA-256 computation
#[test]
fn frozen_vectors() {
    let e = HashEmbedder::new(16);
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert_sparse(&e.embed_one("temperature of water"), &[(3, -h), (15, h)]);
    assert_sparse(
        &e.embed_one("food safety (reduces risk of foodborne illness)"),
        &[(1, 0.5), (5, -0.5), (9, -0.5), (15, -0.5)],
    );
    let s = 1.0 / 7f64.sqrt();
    assert_sparse(
        &e.embed_one("Hot water helps in killing any potential foodborne pathogens"),
        &[(0, s), (1, s), (9, -2.0 * s), (13, s)],
    );
}
