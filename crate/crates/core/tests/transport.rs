mod support;

use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use honestcalib::transport::{ground_distances, simplex, solve_emd, wmd, TokenBag, WeightedToken};

fn bag_from(points: &[(f64, Vec<f64>)], prefix: &str) -> TokenBag {
    TokenBag::new(points.iter().enumerate().map(|(i, (w, e))| WeightedToken {
        token: format!("{prefix}{i}"),
        weight: *w,
        embedding: e.clone(),
    }))
    .unwrap()
}

fn points(dim: usize) -> impl Strategy<Value = Vec<(f64, Vec<f64>)>> {
    prop::collection::vec((0.05f64..1.0, prop::collection::vec(-3.0f64..3.0, dim)), 1..=8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn simplex_matches_min_cost_flow(a in points(3), b in points(3)) {
        let (a, b) = (bag_from(&a, "a"), bag_from(&b, "b"));
        let plan = solve_emd(&a, &b).unwrap();
        let oracle = support::mcf::min_cost(&a.weights(), &b.weights(), &ground_distances(&a, &b).unwrap());
        prop_assert!((plan.cost - oracle).abs() < 1e-9, "{} vs {}", plan.cost, oracle);
    }

    #[test]
    fn plan_is_feasible(a in points(2), b in points(2)) {
        let (a, b) = (bag_from(&a, "a"), bag_from(&b, "b"));
        let plan = solve_emd(&a, &b).unwrap();
        prop_assert!(plan.flows.iter().all(|&f| f >= 0.0));
        for (i, w) in a.weights().iter().enumerate() {
            let row: f64 = (0..plan.cols).map(|j| plan.flow(i, j)).sum();
            prop_assert!((row - w).abs() < 1e-9);
        }
        for (j, w) in b.weights().iter().enumerate() {
            let col: f64 = (0..plan.rows).map(|i| plan.flow(i, j)).sum();
            prop_assert!((col - w).abs() < 1e-9);
        }
        let d = ground_distances(&a, &b).unwrap();
        let cost: f64 = plan.flows.iter().zip(&d).map(|(f, c)| f * c).sum();
        prop_assert!((cost - plan.cost).abs() < 1e-12);
    }

    #[test]
    fn metric_properties(a in points(2), b in points(2), c in points(2)) {
        let (a, b, c) = (bag_from(&a, "a"), bag_from(&b, "b"), bag_from(&c, "c"));
        let d = |x: &TokenBag, y: &TokenBag| solve_emd(x, y).unwrap().cost;
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-7);
        prop_assert!(d(&a, &a).abs() < 1e-7);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-7);
        prop_assert!(d(&a, &b) >= 0.0);
    }

    #[test]
    fn cost_scales_with_embeddings(a in points(2), b in points(2), s in 0.1f64..10.0) {
        let scale = |p: &[(f64, Vec<f64>)]| p.iter().map(|(w, e)| (*w, e.iter().map(|x| x * s).collect())).collect::<Vec<_>>();
        let base = solve_emd(&bag_from(&a, "a"), &bag_from(&b, "b")).unwrap().cost;
        let scaled = solve_emd(&bag_from(&scale(&a), "a"), &bag_from(&scale(&b), "b")).unwrap().cost;
        prop_assert!((scaled - s * base).abs() < 1e-9 * (1.0 + s * base));
    }
}

#[test]
fn degenerate_uniform_instances_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let pool: BTreeMap<String, Vec<f64>> = (0..6)
        .map(|i| (format!("p{i}"), vec![i as f64, (i * i % 5) as f64]))
        .collect();
    for _ in 0..300 {
        use rand::Rng;
        let (m, n) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let a = support::pooled_bag(&mut rng, &pool, m);
        let b = support::pooled_bag(&mut rng, &pool, n);
        let cost = ground_distances(&a, &b).unwrap();
        let s = simplex::solve(&a.weights(), &b.weights(), &cost).unwrap();
        let oracle = support::mcf::min_cost(&a.weights(), &b.weights(), &cost);
        assert!((s.cost - oracle).abs() < 1e-9, "{} vs {}", s.cost, oracle);
    }
}

#[test]
fn duplicate_tokens_merge_before_solving() {
    let emb: BTreeMap<String, Vec<f64>> = [("a".to_string(), vec![0.0]), ("b".to_string(), vec![1.0])].into();
    let toks = |s: &[&str]| s.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    // {a: 2/3, b: 1/3} against {a: 1/3, b: 2/3} moves 1/3 of the mass by 1
    let d = wmd(&toks(&["a", "a", "b"]), &toks(&["a", "b", "b"]), &emb).unwrap();
    assert!((d - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn largest_accepted_bags_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = support::random_bag(&mut rng, "a", 64, 8);
    let b = support::random_bag(&mut rng, "b", 64, 8);
    let plan = solve_emd(&a, &b).unwrap();
    let oracle = support::mcf::min_cost(&a.weights(), &b.weights(), &ground_distances(&a, &b).unwrap());
    assert!((plan.cost - oracle).abs() < 1e-9);
}
