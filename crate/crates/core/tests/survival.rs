mod common;

use distmatch::ingest::{build_cohort, InclusionRules};
use distmatch::simcohort::{generate_raw, SimSpec};
use distmatch::survival::{
    fit_cox, functional_design, partial_likelihood, Basis, BasisKind, CoxDesign, CoxFit, CoxOptions, ScoreTable, Ties,
    RACE_COLUMN,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random_design(seed: u64, n: usize, p: usize, tied: bool) -> CoxDesign {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let times = (0..n)
        .map(|_| {
            if tied {
                rng.random_range(1..6) as f64
            } else {
                rng.random::<f64>() * 10.0 + 0.1
            }
        })
        .collect();
    let events = (0..n).map(|_| rng.random_bool(0.7)).collect();
    let x = (0..n * p).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    CoxDesign::new(times, events, x, (0..p).map(|j| format!("x{j}")).collect()).unwrap()
}

fn fitted(d: &CoxDesign) -> CoxFit {
    fit_cox(d, &CoxOptions::default()).fit().cloned().expect("fit")
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), tied in any::<bool>(), efron in any::<bool>()) {
        let d = random_design(seed, 25, 3, tied);
        let ties = if efron { Ties::Efron } else { Ties::Breslow };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 1);
        let beta: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
        let pl = partial_likelihood(&d, &beta, ties);
        let h = 1e-5;
        for j in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (partial_likelihood(&d, &up, ties).value - partial_likelihood(&d, &dn, ties).value) / (2.0 * h);
            prop_assert!((fd - pl.gradient[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {}", fd, pl.gradient[j]);
            // Information is minus the Hessian.
            let gfd = (partial_likelihood(&d, &up, ties).gradient[j] - partial_likelihood(&d, &dn, ties).gradient[j]) / (2.0 * h);
            prop_assert!((gfd + pl.information[j * 3 + j]).abs() <= 1e-5 * (1.0 + gfd.abs()));
        }
    }

    #[test]
    fn invariances(seed in any::<u64>()) {
        let d = random_design(seed, 80, 2, false);
        let base = fitted(&d);
        let n = d.n();

        // Row order.
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let perm = CoxDesign::new(
            order.iter().map(|&i| d.times[i]).collect(),
            order.iter().map(|&i| d.events[i]).collect(),
            order.iter().flat_map(|&i| d.row(i).to_vec()).collect(),
            d.names.clone(),
        ).unwrap();
        prop_assert!(close(&fitted(&perm).coefficients, &base.coefficients, 1e-8));

        // Column scaling.
        let scaled = d.with_column(0, &d.column(0).iter().map(|x| 4.0 * x).collect::<Vec<_>>());
        let s = fitted(&scaled);
        prop_assert!((s.coefficients[0] * 4.0 - base.coefficients[0]).abs() < 1e-8);
        prop_assert!((s.coefficients[1] - base.coefficients[1]).abs() < 1e-8);

        // Monotone time transform.
        let mut warped = d.clone();
        warped.times = d.times.iter().map(|t| t.exp() + t * t).collect();
        prop_assert!(close(&fitted(&warped).coefficients, &base.coefficients, 1e-9));

        // Duplicated data: same estimate, half the variance (Breslow treats
        // the doubled ties exactly).
        let twice = CoxDesign::new(
            d.times.iter().chain(&d.times).copied().collect(),
            d.events.iter().chain(&d.events).copied().collect(),
            (0..2 * n).flat_map(|i| d.row(i % n).to_vec()).collect(),
            d.names.clone(),
        ).unwrap();
        let t = fit_cox(&twice, &CoxOptions { ties: Ties::Breslow, ..CoxOptions::default() });
        let b = fit_cox(&d, &CoxOptions { ties: Ties::Breslow, ..CoxOptions::default() });
        let (t, b) = (t.fit().unwrap(), b.fit().unwrap());
        prop_assert!(close(&t.coefficients, &b.coefficients, 1e-8));
        prop_assert!((2.0 * t.covariance[0] - b.covariance[0]).abs() < 1e-8 * b.covariance[0]);
    }
}

#[test]
fn functional_design_columns() {
    let raw = generate_raw(&SimSpec {
        n_treated: 15,
        n_control: 25,
        seed: 3,
        ..SimSpec::default()
    })
    .unwrap();
    let cohort = build_cohort(&raw, &InclusionRules::default()).unwrap();
    let all: Vec<usize> = (0..cohort.len()).collect();
    let d = functional_design(&cohort, &all, 6, BasisKind::PeriodicBSpline).unwrap();
    assert_eq!(d.p(), 4 + 6);
    assert_eq!(d.names[RACE_COLUMN], "race");
    let race = d.column(RACE_COLUMN);
    assert_eq!(race.iter().filter(|&&r| r == 1.0).count(), 15);
    let age = d.column(1);
    let mean = age.iter().sum::<f64>() / age.len() as f64;
    assert!(mean.abs() < 1e-12);

    // The B-splines partition unity, so a participant's scores sum to
    // their mean count per minute.
    let table = ScoreTable::new(&cohort, BasisKind::PeriodicBSpline, 6).unwrap();
    let p = &cohort.participants[0];
    let n_minutes = (p.good_days.len() * 1440) as f64;
    let mean = p.good_days.iter().flat_map(|d| &d.counts).sum::<f64>() / n_minutes;
    let sum: f64 = table.scores(0).iter().sum();
    assert!((sum - mean).abs() < 1e-9 * mean, "{sum} vs {mean}");
    let basis = Basis::new(BasisKind::PeriodicBSpline, 6).unwrap();
    for m in [0usize, 17, 700, 1439] {
        let s: f64 = (0..6).map(|k| basis.value(k, m as f64 / 1440.0)).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
    assert!(functional_design(&cohort, &all, 0, BasisKind::Fourier).is_err());
    assert!(functional_design(&cohort, &all, 51, BasisKind::Fourier).is_err());
}

#[test]
fn null_effect_is_estimated_near_zero() {
    let raw = generate_raw(&SimSpec {
        n_treated: 400,
        n_control: 400,
        true_gamma: 0.0,
        baseline_hazard: 0.05,
        followup_min: 200.0,
        followup_max: 200.0,
        seed: 99,
        ..SimSpec::default()
    })
    .unwrap();
    let cohort = build_cohort(&raw, &InclusionRules::default()).unwrap();
    let all: Vec<usize> = (0..cohort.len()).collect();
    let d = functional_design(&cohort, &all, 4, BasisKind::PeriodicBSpline).unwrap();
    let fit = fitted(&d);
    let se = fit.std_error(RACE_COLUMN);
    assert!(fit.coefficients[RACE_COLUMN].abs() < 4.0 * se, "{} (se {se})", fit.coefficients[RACE_COLUMN]);
}
