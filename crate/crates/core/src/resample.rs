//! Day bootstrap: how far a participant is from themselves.
//!
//! Each resample draws `d` of the participant's `d` good days with
//! replacement, pools their minutes and recomputes the quantile function.
//! Distances among the resamples measure day-to-day variability; their
//! median is compared against distances between participants.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{pairwise_matrix, wasserstein, DistanceConfig};
use crate::ingest::{Cohort, Participant};
use crate::output::StagedDir;
use crate::quantile::{
    pooled_samples, quantile_of_sorted, quantiles_of_sorted, PoolingOptions, ProbGrid, QuantileFunction,
    QuantileRule, QuantileStore,
};
use crate::seed;
use crate::{Error, Result, MINUTES_PER_DAY};

#[derive(Debug, Clone)]
pub struct BootstrapSet {
    pub participant_id: String,
    /// Day positions drawn for each resample, sorted, indexing the
    /// participant's good days in canonical order.
    pub draws: Vec<Vec<usize>>,
    pub quantile_functions: Vec<QuantileFunction>,
    pub seed: u64,
}

impl BootstrapSet {
    pub fn b(&self) -> usize {
        self.quantile_functions.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinSummary {
    pub participant_id: String,
    /// `B (B - 1) / 2` distances, pairs `(i, j)` with `i < j` row by row.
    pub distances: Vec<f64>,
    pub median: f64,
    pub interval: String,
}

/// Sample median (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    quantile_of_sorted(&v, 0.5, QuantileRule::Linear)
}

/// Good-day minute vectors, each sorted ascending, in a canonical order
/// that ignores day labels.
fn canonical_sorted_days(participant: &Participant, opts: &PoolingOptions) -> Vec<Vec<f64>> {
    let mut days: Vec<Vec<f64>> = participant
        .good_days
        .iter()
        .map(|d| {
            let single = Participant {
                good_days: vec![d.clone()],
                ..participant.clone()
            };
            let mut v = pooled_samples(&single, opts);
            v.sort_unstable_by(f64::total_cmp);
            v
        })
        .collect();
    days.sort_by(|a, b| {
        a.len()
            .cmp(&b.len())
            .then_with(|| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
    });
    days
}

fn merge(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Sorted pooled sample for a multiset of days.
fn pool_sorted(days: &[Vec<f64>], draw: &[usize]) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::with_capacity(draw.len() * MINUTES_PER_DAY);
    for &k in draw {
        acc = merge(&acc, &days[k]);
    }
    acc
}

/// `b` draws of `d` day positions with replacement, each sorted.
fn draw_days(d: usize, b: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = seed::rng(seed);
    (0..b)
        .map(|_| {
            let mut draw: Vec<usize> = (0..d).map(|_| rng.random_range(0..d)).collect();
            draw.sort_unstable();
            draw
        })
        .collect()
}

/// Seed of a participant's bootstrap stream under a run seed.
pub fn participant_seed(run_seed: u64, participant_id: &str) -> u64 {
    seed::derive_seed(run_seed, seed::stable_hash(participant_id.as_bytes()))
}

fn check_args(participant: &Participant, b: usize) -> Result<()> {
    if participant.good_days.is_empty() {
        return Err(Error::Invalid(format!(
            "participant {} has no good days to resample",
            participant.participant_id
        )));
    }
    if b < 2 {
        return Err(Error::Invalid(format!("bootstrap needs B >= 2, got {b}")));
    }
    Ok(())
}

pub fn bootstrap_days(
    participant: &Participant,
    b: usize,
    grid: &Arc<ProbGrid>,
    rule: QuantileRule,
    opts: &PoolingOptions,
    seed: u64,
) -> Result<BootstrapSet> {
    check_args(participant, b)?;
    let days = canonical_sorted_days(participant, opts);
    let draws = draw_days(days.len(), b, seed);
    let quantile_functions = draws
        .iter()
        .map(|draw| {
            let pooled = pool_sorted(&days, draw);
            if pooled.is_empty() {
                return Err(Error::Quantile(crate::quantile::QuantileError::EmptySample));
            }
            Ok(quantiles_of_sorted(&pooled, grid, rule))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BootstrapSet {
        participant_id: participant.participant_id.clone(),
        draws,
        quantile_functions,
        seed,
    })
}

fn within_from_functions(qfs: &[QuantileFunction]) -> Vec<f64> {
    let b = qfs.len();
    let mut out = Vec::with_capacity(b * b.saturating_sub(1) / 2);
    for i in 0..b {
        for j in i + 1..b {
            out.push(wasserstein(&qfs[i], &qfs[j]).expect("bootstrap functions share one grid"));
        }
    }
    out
}

pub fn within_distances(set: &BootstrapSet) -> WithinSummary {
    let distances = within_from_functions(&set.quantile_functions);
    let interval = set
        .quantile_functions
        .first()
        .map(|q| q.grid().interval().to_string())
        .unwrap_or_default();
    WithinSummary {
        participant_id: set.participant_id.clone(),
        median: median(&distances),
        distances,
        interval,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_unstable_by(f64::total_cmp);
        if v.is_empty() {
            return Self {
                n: 0,
                min: f64::NAN,
                q1: f64::NAN,
                median: f64::NAN,
                q3: f64::NAN,
                max: f64::NAN,
            };
        }
        let q = |p| quantile_of_sorted(&v, p, QuantileRule::Linear);
        Self {
            n: v.len(),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
        }
    }
}

/// Within- and between-person distances for one grid.
#[derive(Debug, Clone)]
pub struct IntervalSummary {
    pub grid: Arc<ProbGrid>,
    /// Condensed upper triangle over the cohort, in cohort order.
    pub between: Vec<f64>,
    /// Median within-person distance, in cohort order.
    pub within_medians: Vec<f64>,
    pub between_summary: FiveNumber,
    pub within_summary: FiveNumber,
}

/// Bootstraps every participant once (`b` resamples, shared across grids)
/// and compares within-person medians with between-person distances on
/// each grid. Between-person distances use the original pooled functions.
pub fn within_between_summary(
    cohort: &Cohort,
    grids: &[Arc<ProbGrid>],
    b: usize,
    rule: QuantileRule,
    opts: &PoolingOptions,
    run_seed: u64,
) -> Result<Vec<IntervalSummary>> {
    if cohort.is_empty() {
        return Err(Error::Invalid("cohort is empty".into()));
    }
    if grids.is_empty() {
        return Err(Error::Invalid("no grids given".into()));
    }
    // medians[participant][grid]
    let medians: Vec<Vec<f64>> = cohort
        .participants
        .par_iter()
        .map(|p| {
            check_args(p, b)?;
            let days = canonical_sorted_days(p, opts);
            let draws = draw_days(days.len(), b, participant_seed(run_seed, &p.participant_id));
            let pools: Vec<Vec<f64>> = draws.iter().map(|d| pool_sorted(&days, d)).collect();
            Ok(grids
                .iter()
                .map(|g| {
                    let qfs: Vec<_> = pools.iter().map(|s| quantiles_of_sorted(s, g, rule)).collect();
                    median(&within_from_functions(&qfs))
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let store = QuantileStore::new(cohort, opts)?;
    let ids: Vec<String> = cohort.ids().iter().map(|s| s.to_string()).collect();
    grids
        .iter()
        .enumerate()
        .map(|(gi, grid)| {
            let config = DistanceConfig {
                grid: Arc::clone(grid),
                quantile_rule: rule,
            };
            let qfs = store.quantile_functions(grid, rule);
            let matrix = pairwise_matrix(&ids, &qfs, &config)?;
            let within_medians: Vec<f64> = medians.iter().map(|m| m[gi]).collect();
            Ok(IntervalSummary {
                grid: Arc::clone(grid),
                between_summary: FiveNumber::of(matrix.upper()),
                within_summary: FiveNumber::of(&within_medians),
                between: matrix.upper().to_vec(),
                within_medians,
            })
        })
        .collect()
}

/// Writes `within_medians.csv`, `between_sample.csv` and `summary.csv`.
///
/// `max_between_rows` caps the between-person rows per grid; when the
/// number of pairs exceeds it, a seeded uniform sample of pairs is written
/// in ascending pair order. Zero writes every pair.
pub fn write_outputs(
    dir: &StagedDir,
    cohort: &Cohort,
    summaries: &[IntervalSummary],
    max_between_rows: usize,
    run_seed: u64,
) -> Result<()> {
    let ids = cohort.ids();
    let n = ids.len();
    dir.write("within_medians.csv", |w| {
        writeln!(w, "participant_id,J,interval,median")?;
        for s in summaries {
            for (id, m) in ids.iter().zip(&s.within_medians) {
                writeln!(w, "{id},{},\"{}\",{m}", s.grid.nominal_j(), s.grid.interval())?;
            }
        }
        Ok(())
    })?;
    dir.write("between_sample.csv", |w| {
        writeln!(w, "id_a,id_b,J,interval,distance")?;
        let pair_index: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for (gi, s) in summaries.iter().enumerate() {
            let total = s.between.len();
            let chosen: Vec<usize> = if max_between_rows == 0 || total <= max_between_rows {
                (0..total).collect()
            } else {
                let mut rng = seed::rng(seed::derive_seed(run_seed, 0xB7 + gi as u64));
                let mut v = rand::seq::index::sample(&mut rng, total, max_between_rows).into_vec();
                v.sort_unstable();
                v
            };
            for k in chosen {
                let (i, j) = pair_index[k];
                writeln!(
                    w,
                    "{},{},{},\"{}\",{}",
                    ids[i],
                    ids[j],
                    s.grid.nominal_j(),
                    s.grid.interval(),
                    s.between[k]
                )?;
            }
        }
        Ok(())
    })?;
    dir.write("summary.csv", |w| {
        writeln!(w, "J,interval,kind,n,min,q1,median,q3,max")?;
        for s in summaries {
            for (kind, f) in [("between", &s.between_summary), ("within_median", &s.within_summary)] {
                writeln!(
                    w,
                    "{},\"{}\",{kind},{},{},{},{},{},{}",
                    s.grid.nominal_j(),
                    s.grid.interval(),
                    f.n,
                    f.min,
                    f.q1,
                    f.median,
                    f.q3,
                    f.max
                )?;
            }
        }
        Ok(())
    })
}
