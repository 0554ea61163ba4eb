mod common;

use std::sync::Arc;

use distmatch::distance::{pairwise_matrix, DistanceConfig, DistanceMatrix};
use distmatch::ingest::{
    build_cohort, load_activity, load_tables, write_activity, write_demographics, write_mortality, Group, IngestError,
    InclusionRules, NonwearRule,
};
use distmatch::matching::{audit, candidate_set, match_once, match_repeat, CaliperSpec, UnmatchedReason};
use distmatch::quantile::{build_grid, GridRule, Interval, PoolingOptions, QuantileRule, QuantileStore};
use distmatch::simcohort::{generate_raw, SimSpec};
use distmatch::MINUTES_PER_DAY;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;

fn distances(cohort: &distmatch::ingest::Cohort, j: usize) -> DistanceMatrix {
    let config = DistanceConfig {
        grid: Arc::new(build_grid(j, Interval::UNIT, GridRule::Truncated).unwrap()),
        quantile_rule: QuantileRule::Linear,
    };
    let store = QuantileStore::new(cohort, &PoolingOptions::default()).unwrap();
    let qfs = store.quantile_functions(&config.grid, config.quantile_rule);
    let ids: Vec<String> = cohort.ids().iter().map(|s| s.to_string()).collect();
    pairwise_matrix(&ids, &qfs, &config).unwrap()
}

fn write_tables(dir: &std::path::Path, raw: &distmatch::ingest::RawRecords) {
    write_activity(raw, std::fs::File::create(dir.join("activity.csv")).unwrap()).unwrap();
    write_demographics(raw, std::fs::File::create(dir.join("demographics.csv")).unwrap()).unwrap();
    write_mortality(raw, std::fs::File::create(dir.join("mortality.csv")).unwrap()).unwrap();
}

fn load(dir: &std::path::Path) -> Result<distmatch::ingest::RawRecords, IngestError> {
    load_tables(
        &dir.join("activity.csv"),
        &dir.join("demographics.csv"),
        &dir.join("mortality.csv"),
        &NonwearRule::default(),
    )
}

fn small_sim(seed: u64) -> SimSpec {
    SimSpec {
        n_treated: 6,
        n_control: 9,
        bad_day_prob: 0.5,
        seed,
        ..SimSpec::default()
    }
}

#[test]
fn ingest_is_idempotent_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let raw = generate_raw(&small_sim(4)).unwrap();
    write_tables(dir.path(), &raw);
    let loaded = load(dir.path()).unwrap();
    assert_eq!(loaded, raw);
    let rules = InclusionRules::default();
    let cohort = build_cohort(&loaded, &rules).unwrap();
    let again = build_cohort(&cohort.to_raw(&rules), &rules).unwrap();
    assert_eq!(again.participants, cohort.participants);
}

#[test]
fn ingest_ignores_row_order() {
    let dir = tempfile::tempdir().unwrap();
    let raw = generate_raw(&small_sim(8)).unwrap();
    write_tables(dir.path(), &raw);
    let path = dir.path().join("activity.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let header = lines.remove(0);
    lines.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    std::fs::write(&path, format!("{header}\n{}\n", lines.join("\n"))).unwrap();
    assert_eq!(load(dir.path()).unwrap(), raw);
}

#[test]
fn malformed_activity_names_line_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("activity.csv");
    let mut header = "participant_id,day_index,calibrated,reliable".to_string();
    for m in 1..=MINUTES_PER_DAY {
        header.push_str(&format!(",m{m}"));
    }
    let good = vec!["1"; MINUTES_PER_DAY].join(",");
    let mut bad: Vec<&str> = vec!["1"; MINUTES_PER_DAY];
    bad[9] = "-4";
    std::fs::write(&path, format!("{header}\na,1,1,1,{good}\na,2,1,1,{}\n", bad.join(","))).unwrap();
    match load_activity(&path, &NonwearRule::default()) {
        Err(IngestError::Malformed { line, column, message, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(column, Some(4 + 10));
            assert!(message.contains("negative"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    // Without a wear column, wear time follows the zero-run rule.
    let mut zeros = vec!["0"; MINUTES_PER_DAY];
    zeros[0] = "5";
    std::fs::write(&path, format!("{header}\nb,1,1,1,{}\n", zeros.join(","))).unwrap();
    let raw = load_activity(&path, &NonwearRule::default()).unwrap();
    assert_eq!(raw.days["b"][0].wear_minutes, 1);
    std::fs::write(&path, format!("{header}\nb,1,1,1,{good}\nb,1,1,1,{good}\n")).unwrap();
    assert!(matches!(
        load_activity(&path, &NonwearRule::default()),
        Err(IngestError::DuplicateDay { line: 3, .. })
    ));
}

#[test]
fn provenance_counts_never_increase() {
    let raw = generate_raw(&SimSpec {
        n_treated: 20,
        n_control: 20,
        days_min: 1,
        age_min: 40.0,
        age_mean_control: 50.0,
        seed: 2,
        ..SimSpec::default()
    })
    .unwrap();
    let cohort = build_cohort(&raw, &InclusionRules::default()).unwrap();
    let counts: Vec<usize> = cohort.provenance.stages.iter().map(|s| s.remaining).collect();
    assert_eq!(counts[0], 40);
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    assert!(*counts.last().unwrap() < 40);
    assert!(cohort.participants.iter().all(|p| p.age > 50.0 && p.good_days.len() >= 3));
}

#[test]
fn candidate_sets_nest_in_the_caliper() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let cohort = common::random_cohort(&mut rng, 8, 14, 2);
    let m = distances(&cohort, 49);
    let spec = CaliperSpec::default();
    let calipers = [10.0, 50.0, 100.0, 200.0, 400.0, f64::INFINITY];
    for t in cohort.treated_indices() {
        let sets: Vec<Vec<usize>> = calipers
            .iter()
            .map(|&c| candidate_set(&cohort, t, &spec.with_pa(c), &m))
            .collect();
        for w in sets.windows(2) {
            assert!(w[0].iter().all(|c| w[1].contains(c)));
        }
    }
}

#[test]
fn unmatched_reasons() {
    use distmatch::ingest::Group::*;
    let flat = |v: f64| vec![vec![v; MINUTES_PER_DAY]];
    let cohort = common::cohort(vec![
        common::person("t1", Treated, 60.0, "1", 25.0, flat(10.0)),
        common::person("t2", Treated, 80.0, "1", 25.0, flat(10.0)),
        common::person("t3", Treated, 60.0, "1", 25.0, flat(500.0)),
        common::person("c1", Control, 61.0, "1", 26.0, flat(12.0)),
    ]);
    let m = distances(&cohort, 9);
    let spec = CaliperSpec::default().with_pa(5.0);
    let set = match_once(&cohort, &spec, &m, 3).unwrap();
    audit(&cohort, &spec, &m, &set).unwrap();
    assert_eq!(set.pairs.len(), 1);
    let reasons: std::collections::BTreeMap<_, _> = set.unmatched.iter().cloned().collect();
    assert_eq!(reasons["t2"], UnmatchedReason::NoDemographicCandidate);
    assert_eq!(reasons["t3"], UnmatchedReason::NoActivityCandidate);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matchings_pass_the_audit(seed in any::<u64>(), c in 1.0f64..600.0, reps in 1usize..4) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cohort = common::random_cohort(&mut rng, 10, 12, 1);
        let m = distances(&cohort, 19);
        let spec = CaliperSpec::default().with_pa(c);
        let sets = match_repeat(&cohort, &spec, &m, reps, seed).unwrap();
        let again = match_repeat(&cohort, &spec, &m, reps, seed).unwrap();
        prop_assert_eq!(&sets, &again);
        for set in &sets {
            prop_assert!(audit(&cohort, &spec, &m, set).is_ok());
            prop_assert!(set.pairs.len() <= cohort.control_indices().len());
            for p in &set.pairs {
                let t = cohort.index_of(&p.treated).unwrap();
                prop_assert_eq!(cohort.participants[t].group, Group::Treated);
            }
        }
    }
}
