mod common;

use common::*;
use mlsieve::extensions::*;
use mlsieve::objectives::make_cut;
use mlsieve::FractionalVector;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn exact_multilinear_matches_definition() {
    let mut r = rng(11);
    for _ in 0..60 {
        let n = r.random_range(1..=10);
        let f = random_oracle(&mut r, n);
        let support: Vec<usize> = (0..n).filter(|_| r.random_bool(0.8)).collect();
        let mut x = random_point(&mut r, &support);
        if let Some(&e) = support.first() {
            x.set(e, 1.0).unwrap();
        }
        let fast = multilinear_exact(&f, &x, DEFAULT_EXACT_CAP).unwrap();
        let slow = multilinear_by_definition(f.function(), &x);
        assert!((fast - slow).abs() <= 1e-9 * (1.0 + slow.abs()), "{fast} vs {slow}");
    }
}

#[test]
fn lovasz_matches_integral_form() {
    let mut r = rng(12);
    for _ in 0..200 {
        let n = r.random_range(1..=10);
        let f = random_oracle(&mut r, n);
        let support: Vec<usize> = (0..n).filter(|_| r.random_bool(0.7)).collect();
        let mut x = random_point(&mut r, &support);
        if support.len() > 1 {
            // Repeated levels exercise tie handling.
            x.set(support[1], x.get(support[0])).unwrap();
        }
        let a = lovasz(&f, &x).unwrap();
        let b = lovasz_by_integral(f.function(), &x);
        assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn derivative_identity_holds_exactly() {
    // ∂_u F(x) = F(x ∨ 1_u) − F(x ∧ 1_{N∖u}), and F is affine in x_u.
    let mut r = rng(13);
    for _ in 0..100 {
        let n = r.random_range(2..=9);
        let f = random_oracle(&mut r, n);
        let x = random_point(&mut r, &(0..n).collect::<Vec<_>>());
        let u = r.random_range(0..n);
        let d = partial_derivative_exact(&f, &x, u, DEFAULT_EXACT_CAP).unwrap();
        let lo = multilinear_by_definition(f.function(), &x.without(u));
        let hi = multilinear_by_definition(f.function(), &x.join_unit(u));
        assert!((d - (hi - lo)).abs() <= 1e-9);
        let mid = multilinear_by_definition(f.function(), &x);
        assert!((mid - (lo + x.get(u) * d)).abs() <= 1e-9);
    }
}

#[test]
fn estimator_is_unbiased_within_three_standard_errors() {
    let mut r = rng(14);
    let mut outside = 0;
    let trials = 40;
    for trial in 0..trials {
        let n = r.random_range(3..=9);
        let f = random_oracle(&mut r, n);
        let x = random_point(&mut r, &(0..n).collect::<Vec<_>>());
        let u = r.random_range(0..n);
        let exact = partial_derivative_exact(&f, &x, u, DEFAULT_EXACT_CAP).unwrap();
        let est = estimate_partial_derivative(&f, &x, u, 20_000, trial).unwrap();
        let se = (est.variance / est.samples as f64).sqrt();
        if (est.mean - exact).abs() > 3.0 * se + 1e-12 {
            outside += 1;
        }
    }
    // Each check fails with probability ≈ 0.3%.
    assert!(outside <= 1, "{outside} of {trials} estimates off by more than 3 SE");
}

#[test]
fn estimator_handles_u_in_support() {
    // x_0 = 1/2: every draw must evaluate f({0}) − f(∅) = 1, whether or not
    // 0 was drawn into R(x).
    let f = make_cut(2, vec![(0, 1, 1.0)]).unwrap();
    let x = FractionalVector::from_pairs([(0, 0.5)]).unwrap();
    let exact = partial_derivative_exact(&f, &x, 0, DEFAULT_EXACT_CAP).unwrap();
    assert_eq!(exact, 1.0);
    let est = estimate_partial_derivative(&f, &x, 0, 200, 3).unwrap();
    assert_eq!(est.mean, 1.0);
    assert_eq!(est.variance, 0.0);
}

#[test]
fn sampled_multilinear_is_close() {
    let mut r = rng(15);
    let f = random_submodular(&mut r, 8);
    let x = random_point(&mut r, &(0..8).collect::<Vec<_>>());
    let exact = multilinear_exact(&f, &x, DEFAULT_EXACT_CAP).unwrap();
    let approx = multilinear_sampled(&f, &x, 40_000, 5).unwrap();
    assert!((exact - approx).abs() < 0.05 * (1.0 + exact), "{exact} vs {approx}");
}

#[test]
fn exact_cap_is_enforced() {
    let f = make_cut(30, (0..29).map(|i| (i, i + 1, 1.0)).collect()).unwrap();
    let x = FractionalVector::from_pairs((0..25).map(|e| (e, 0.5))).unwrap();
    assert!(matches!(
        multilinear_exact(&f, &x, DEFAULT_EXACT_CAP),
        Err(mlsieve::Error::Capacity { .. })
    ));
}

fn coords() -> impl Strategy<Value = Vec<(usize, f64)>> {
    prop::collection::vec((0usize..12, 0.0f64..=1.0), 0..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn l1_norm_tracks_coordinates(pairs in coords()) {
        let mut x = FractionalVector::new();
        let mut dense = [0.0f64; 12];
        for (e, v) in pairs {
            x.set(e, v).unwrap();
            dense[e] = v;
        }
        let expect: f64 = dense.iter().sum();
        prop_assert!((x.l1() - expect).abs() <= 1e-9);
        prop_assert_eq!(x.support_len(), dense.iter().filter(|&&v| v > 0.0).count());
    }

    #[test]
    fn lovasz_never_exceeds_multilinear(seed in any::<u64>(), n in 1usize..9) {
        let mut r = rng(seed);
        let f = random_oracle(&mut r, n);
        let x = random_point(&mut r, &(0..n).collect::<Vec<_>>());
        let big = multilinear_exact(&f, &x, DEFAULT_EXACT_CAP).unwrap();
        let small = lovasz(&f, &x).unwrap();
        prop_assert!(big >= small - 1e-9, "F = {} < f̂ = {}", big, small);
    }

    #[test]
    fn extensions_agree_at_vertices(seed in any::<u64>(), n in 1usize..9, mask in any::<u64>()) {
        let mut r = rng(seed);
        let f = random_oracle(&mut r, n);
        let set: Vec<usize> = (0..n).filter(|&e| mask >> e & 1 == 1).collect();
        let x = FractionalVector::indicator(&set);
        let v = f.value(&set).unwrap();
        prop_assert_eq!(multilinear_exact(&f, &x, DEFAULT_EXACT_CAP).unwrap(), v);
        prop_assert_eq!(lovasz(&f, &x).unwrap(), v);
    }

    #[test]
    fn adding_a_small_vector_keeps_most_value(seed in any::<u64>(), p in prop::sample::select(vec![0.1, 0.24, 0.5])) {
        let mut r = rng(seed);
        let n = 8;
        let f = random_submodular(&mut r, n);
        let split = r.random_range(0..=n);
        let x = random_point(&mut r, &(0..split).collect::<Vec<_>>());
        let y = FractionalVector::from_pairs((split..n).map(|e| (e, r.random_range(0.0..=p)))).unwrap();
        let fx = multilinear_exact(&f, &x, DEFAULT_EXACT_CAP).unwrap();
        let fxy = multilinear_exact(&f, &x.plus(&y).unwrap(), DEFAULT_EXACT_CAP).unwrap();
        prop_assert!(fxy >= (1.0 - p) * fx - 1e-9);
    }
}
