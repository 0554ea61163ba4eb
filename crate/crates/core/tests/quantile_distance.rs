mod common;

use std::sync::Arc;

use distmatch::distance::{pairwise_matrix, pairwise_matrix_serial, sq_discrepancy, wasserstein, DistanceConfig, DistanceMatrix};
use distmatch::quantile::{
    build_grid, empirical_quantiles, quantile_of_sorted, GridRule, Interval, ProbGrid, QuantileFunction, QuantileRule,
};
use proptest::prelude::*;
use rand::SeedableRng;

fn grid(j: usize, lo: f64, hi: f64) -> Arc<ProbGrid> {
    Arc::new(build_grid(j, Interval::new(lo, hi).unwrap(), GridRule::Truncated).unwrap())
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..5000.0, 1..200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn quantiles_are_monotone_and_bounded(xs in sample(), j in 1usize..300) {
        for rule in [QuantileRule::Linear, QuantileRule::Nearest] {
            let q = empirical_quantiles(&xs, &grid(j, 0.0, 1.0), rule).unwrap();
            let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
            prop_assert!(q.values().windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(q.values().iter().all(|&v| lo <= v && v <= hi));
        }
    }

    #[test]
    fn nearest_rule_returns_sample_values(xs in sample(), j in 1usize..100) {
        let q = empirical_quantiles(&xs, &grid(j, 0.0, 1.0), QuantileRule::Nearest).unwrap();
        prop_assert!(q.values().iter().all(|v| xs.contains(v)));
    }

    #[test]
    fn quantiles_ignore_sample_order(mut xs in sample(), seed in any::<u64>()) {
        let g = grid(99, 0.0, 1.0);
        let a = empirical_quantiles(&xs, &g, QuantileRule::Linear).unwrap();
        use rand::seq::SliceRandom;
        xs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = empirical_quantiles(&xs, &g, QuantileRule::Linear).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn quantiles_are_affine_equivariant(xs in sample(), shift in -100.0f64..100.0, scale in 0.01f64..50.0) {
        let g = grid(49, 0.0, 1.0);
        let a = empirical_quantiles(&xs, &g, QuantileRule::Linear).unwrap();
        let ys: Vec<f64> = xs.iter().map(|x| shift + scale * x).collect();
        let b = empirical_quantiles(&ys, &g, QuantileRule::Linear).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            let expect = shift + scale * u;
            prop_assert!((v - expect).abs() <= 1e-9 * (1.0 + expect.abs()), "{} vs {}", v, expect);
        }
    }

    #[test]
    fn metric_axioms(seed in any::<u64>(), j in 1usize..400) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = grid(j, 0.0, 1.0);
        let n = g.j_eff();
        let q: Vec<QuantileFunction> = (0..3)
            .map(|_| QuantileFunction::from_values(Arc::clone(&g), common::monotone(&mut rng, n, 30.0), n))
            .collect();
        let d = |a: usize, b: usize| wasserstein(&q[a], &q[b]).unwrap();
        prop_assert_eq!(d(0, 0), 0.0);
        prop_assert_eq!(d(0, 1).to_bits(), d(1, 0).to_bits());
        prop_assert!(d(0, 1) >= 0.0);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2));
    }

    #[test]
    fn nested_grids_accumulate_more(seed in any::<u64>(), j in 199usize..2500) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let full = grid(j, 0.0, 1.0);
        let mid = grid(j, 0.01, 0.99);
        let inner = grid(j, 0.05, 0.95);
        prop_assert!(inner.probs().iter().all(|p| mid.probs().contains(p)));
        prop_assert!(mid.probs().iter().all(|p| full.probs().contains(p)));
        // Evaluate two sample quantile functions on each grid.
        let xs: Vec<f64> = (0..500).map(|_| rand::Rng::random::<f64>(&mut rng) * 900.0).collect();
        let ys: Vec<f64> = (0..300).map(|_| rand::Rng::random::<f64>(&mut rng) * 400.0).collect();
        let sq = |g: &Arc<ProbGrid>| {
            let a = empirical_quantiles(&xs, g, QuantileRule::Linear).unwrap();
            let b = empirical_quantiles(&ys, g, QuantileRule::Linear).unwrap();
            sq_discrepancy(&a, &b).unwrap()
        };
        prop_assert!(sq(&inner) <= sq(&mid));
        prop_assert!(sq(&mid) <= sq(&full));
    }
}

#[test]
fn footnote_grids_coincide() {
    for j in [1, 3, 4, 9, 19] {
        let a = grid(j, 0.0, 1.0);
        assert!(a.same_points(&grid(j, 0.01, 0.99)), "J={j}");
        assert!(a.same_points(&grid(j, 0.05, 0.95)), "J={j}");
    }
    assert!(grid(99, 0.0, 1.0).same_points(&grid(99, 0.01, 0.99)));
    assert!(!grid(99, 0.0, 1.0).same_points(&grid(99, 0.05, 0.95)));
    assert_eq!(grid(99, 0.05, 0.95).j_eff(), 91);
    assert_eq!(grid(999, 0.01, 0.99).j_eff(), 981);
    assert_eq!(grid(999, 0.05, 0.95).j_eff(), 901);
    for j in [199, 999, 1999] {
        assert!(!grid(j, 0.0, 1.0).same_points(&grid(j, 0.01, 0.99)), "J={j}");
    }
}

#[test]
fn closed_rule_keeps_j_points() {
    for j in [1, 2, 9, 100] {
        for i in Interval::standard() {
            let g = build_grid(j, i, GridRule::Closed).unwrap();
            assert_eq!(g.j_eff(), j);
            if j > 1 {
                assert_eq!(g.probs()[0], i.lo());
                assert_eq!(*g.probs().last().unwrap(), i.hi());
            }
        }
    }
}

#[test]
fn small_sample_quantiles() {
    let xs = [10.0, 20.0, 30.0, 40.0];
    // h = 3 p + 1
    assert_eq!(quantile_of_sorted(&xs, 0.0, QuantileRule::Linear), 10.0);
    assert_eq!(quantile_of_sorted(&xs, 0.5, QuantileRule::Linear), 25.0);
    assert_eq!(quantile_of_sorted(&xs, 1.0, QuantileRule::Linear), 40.0);
    assert!(empirical_quantiles(&[], &grid(3, 0.0, 1.0), QuantileRule::Linear).is_err());
    assert!(empirical_quantiles(&[1.0, f64::NAN], &grid(3, 0.0, 1.0), QuantileRule::Linear).is_err());
}

#[test]
fn parallel_matrix_matches_serial_and_round_trips() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let config = DistanceConfig {
        grid: grid(199, 0.01, 0.99),
        quantile_rule: QuantileRule::Linear,
    };
    let n = 60;
    let qfs: Vec<_> = (0..n)
        .map(|_| {
            let v = common::monotone(&mut rng, config.grid.j_eff(), 10.0);
            QuantileFunction::from_values(Arc::clone(&config.grid), v, 1)
        })
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("id{i:03}")).collect();
    let par = pairwise_matrix(&ids, &qfs, &config).unwrap();
    let ser = pairwise_matrix_serial(&ids, &qfs, &config).unwrap();
    assert_eq!(par, ser);
    for (i, j, d) in par.pairs() {
        assert_eq!(d.to_bits(), wasserstein(&qfs[i], &qfs[j]).unwrap().to_bits());
    }
    let mut buf = Vec::new();
    par.write_csv(&mut buf).unwrap();
    let back = DistanceMatrix::read_csv(buf.as_slice(), &ids).unwrap();
    assert_eq!(back, par);
    // A missing pair is reported.
    let text = String::from_utf8(buf).unwrap();
    let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
    assert!(DistanceMatrix::read_csv(cut.as_bytes(), &ids).is_err());
}
