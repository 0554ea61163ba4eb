//! Probability grids and empirical quantile functions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Cohort, NonwearRule, Participant};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("J must be at least 1")]
    ZeroTerms,
    #[error("invalid interval {0}: need 0 <= a < b <= 1")]
    BadInterval(String),
    #[error("grid empty for (J={j}, interval={interval})")]
    Empty { j: usize, interval: Interval },
    #[error("unknown grid rule {0:?} (expected truncated or closed)")]
    UnknownRule(String),
    #[error("unknown quantile rule {0:?} (expected linear or nearest)")]
    UnknownQuantileRule(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum QuantileError {
    #[error("cannot take quantiles of an empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("participant {0} has no good days")]
    NoDays(String),
}

/// Sub-range `[lo, hi]` of `[0, 1]` over which quantiles are compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self, GridError> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(GridError::BadInterval(format!("[{lo},{hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, p: f64) -> bool {
        self.lo <= p && p <= self.hi
    }

    /// The three integration intervals of the standard sensitivity grid.
    pub fn standard() -> Vec<Interval> {
        vec![
            Interval::UNIT,
            Interval { lo: 0.01, hi: 0.99 },
            Interval { lo: 0.05, hi: 0.95 },
        ]
    }

    /// Parses a `;`-separated list such as `0,1;0.01,0.99`.
    pub fn parse_list(s: &str) -> Result<Vec<Interval>, GridError> {
        s.split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.lo, self.hi)
    }
}

impl FromStr for Interval {
    type Err = GridError;

    /// Accepts `a,b` or `[a,b]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
        let mut it = inner.split(',').map(str::trim);
        let parse = |x: Option<&str>| x.and_then(|v| v.parse::<f64>().ok());
        match (parse(it.next()), parse(it.next()), it.next()) {
            (Some(lo), Some(hi), None) => Interval::new(lo, hi),
            _ => Err(GridError::BadInterval(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum GridRule {
    /// `{ j/(J+1) : j = 1..J }` intersected with the interval.
    #[default]
    Truncated,
    /// `J` evenly spaced points from `a` to `b` inclusive (the midpoint when
    /// `J = 1`).
    Closed,
    /// Caller-supplied probabilities, see [`ProbGrid::explicit`].
    Explicit,
}

impl fmt::Display for GridRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridRule::Truncated => "truncated",
            GridRule::Closed => "closed",
            GridRule::Explicit => "explicit",
        })
    }
}

impl FromStr for GridRule {
    type Err = GridError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "truncated" => Ok(GridRule::Truncated),
            "closed" => Ok(GridRule::Closed),
            other => Err(GridError::UnknownRule(other.to_string())),
        }
    }
}

/// The probabilities at which quantile functions are evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbGrid {
    nominal_j: usize,
    interval: Interval,
    rule: GridRule,
    probs: Vec<f64>,
}

impl ProbGrid {
    pub fn nominal_j(&self) -> usize {
        self.nominal_j
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn rule(&self) -> GridRule {
        self.rule
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Number of probabilities actually evaluated.
    pub fn j_eff(&self) -> usize {
        self.probs.len()
    }

    /// Two grids are interchangeable when they evaluate the same points,
    /// whatever their nominal `J` or interval.
    pub fn same_points(&self, other: &ProbGrid) -> bool {
        self.probs.len() == other.probs.len()
            && self
                .probs
                .iter()
                .zip(&other.probs)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// A grid at the given probabilities, which must be strictly
    /// increasing and lie in `[0, 1]`.
    pub fn explicit(probs: Vec<f64>) -> Result<ProbGrid, GridError> {
        let (Some(&lo), Some(&hi)) = (probs.first(), probs.last()) else {
            return Err(GridError::ZeroTerms);
        };
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || probs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(GridError::BadInterval(format!("{probs:?}")));
        }
        Ok(ProbGrid {
            nominal_j: probs.len(),
            interval: Interval { lo, hi },
            rule: GridRule::Explicit,
            probs,
        })
    }

    /// Stable 64-bit key of the evaluated points.
    pub fn points_key(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.probs.len() * 8);
        for p in &self.probs {
            bytes.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        crate::seed::stable_hash(&bytes)
    }
}

pub fn build_grid(j: usize, interval: Interval, rule: GridRule) -> Result<ProbGrid, GridError> {
    if j == 0 {
        return Err(GridError::ZeroTerms);
    }
    if rule == GridRule::Explicit {
        return Err(GridError::UnknownRule(rule.to_string()));
    }
    let probs: Vec<f64> = match rule {
        GridRule::Truncated => {
            let denom = (j + 1) as f64;
            (1..=j)
                .map(|k| k as f64 / denom)
                .filter(|&p| interval.contains(p))
                .collect()
        }
        GridRule::Closed if j == 1 => vec![0.5 * (interval.lo + interval.hi)],
        GridRule::Explicit => unreachable!(),
        GridRule::Closed => {
            let width = interval.hi - interval.lo;
            let last = (j - 1) as f64;
            (0..j)
                .map(|k| {
                    if k == j - 1 {
                        interval.hi
                    } else {
                        interval.lo + width * (k as f64 / last)
                    }
                })
                .collect()
        }
    };
    if probs.is_empty() {
        return Err(GridError::Empty { j, interval });
    }
    Ok(ProbGrid {
        nominal_j: j,
        interval,
        rule,
        probs,
    })
}

/// How a quantile is read off the sorted sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum QuantileRule {
    /// Linear interpolation between order statistics at position
    /// `h = (n - 1) p + 1`.
    #[default]
    Linear,
    /// The order statistic nearest to `h`, ties rounded up.
    Nearest,
}

impl fmt::Display for QuantileRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantileRule::Linear => "linear",
            QuantileRule::Nearest => "nearest",
        })
    }
}

impl FromStr for QuantileRule {
    type Err = GridError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "linear" => Ok(QuantileRule::Linear),
            "nearest" => Ok(QuantileRule::Nearest),
            other => Err(GridError::UnknownQuantileRule(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileFunction {
    grid: Arc<ProbGrid>,
    values: Vec<f64>,
    n_source: usize,
}

impl QuantileFunction {
    /// Wraps precomputed values. `values` must have one entry per grid
    /// probability and be non-decreasing.
    pub fn from_values(grid: Arc<ProbGrid>, values: Vec<f64>, n_source: usize) -> Self {
        assert_eq!(grid.j_eff(), values.len(), "one value per grid point");
        debug_assert!(values.windows(2).all(|w| w[0] <= w[1]));
        Self {
            grid,
            values,
            n_source,
        }
    }

    pub fn grid(&self) -> &Arc<ProbGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_source(&self) -> usize {
        self.n_source
    }
}

/// Quantile of an ascending, non-empty, finite sample.
pub fn quantile_of_sorted(sorted: &[f64], p: f64, rule: QuantileRule) -> f64 {
    let n = sorted.len();
    let pos = (n - 1) as f64 * p;
    match rule {
        QuantileRule::Linear => {
            let lo = pos.floor() as usize;
            if lo + 1 >= n {
                return sorted[n - 1];
            }
            let frac = pos - lo as f64;
            let (a, b) = (sorted[lo], sorted[lo + 1]);
            (a + frac * (b - a)).min(b)
        }
        QuantileRule::Nearest => sorted[((pos + 0.5).floor() as usize).min(n - 1)],
    }
}

/// Evaluates an already sorted sample on `grid`.
pub fn quantiles_of_sorted(sorted: &[f64], grid: &Arc<ProbGrid>, rule: QuantileRule) -> QuantileFunction {
    let values = grid
        .probs()
        .iter()
        .map(|&p| quantile_of_sorted(sorted, p, rule))
        .collect();
    QuantileFunction::from_values(Arc::clone(grid), values, sorted.len())
}

fn check_finite(samples: &[f64]) -> Result<(), QuantileError> {
    if samples.is_empty() {
        return Err(QuantileError::EmptySample);
    }
    match samples.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(QuantileError::NonFinite(i)),
        None => Ok(()),
    }
}

pub fn empirical_quantiles(
    samples: &[f64],
    grid: &Arc<ProbGrid>,
    rule: QuantileRule,
) -> Result<QuantileFunction, QuantileError> {
    check_finite(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(quantiles_of_sorted(&sorted, grid, rule))
}

/// Which minutes of a good day enter the pooled sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolingOptions {
    /// When set, only minutes classified as wear are pooled.
    pub wear_mask: Option<NonwearRule>,
}

/// All minute counts of a participant's good days, concatenated.
pub fn pooled_samples(participant: &Participant, opts: &PoolingOptions) -> Vec<f64> {
    let mut out = Vec::with_capacity(participant.good_days.len() * crate::MINUTES_PER_DAY);
    for day in &participant.good_days {
        match &opts.wear_mask {
            None => out.extend_from_slice(&day.counts),
            Some(rule) => {
                let mask = rule.wear_mask(&day.counts);
                out.extend(day.counts.iter().zip(mask).filter(|(_, m)| *m).map(|(c, _)| *c));
            }
        }
    }
    out
}

pub fn pooled_quantiles(
    participant: &Participant,
    grid: &Arc<ProbGrid>,
    rule: QuantileRule,
    opts: &PoolingOptions,
) -> Result<QuantileFunction, QuantileError> {
    if participant.good_days.is_empty() {
        return Err(QuantileError::NoDays(participant.participant_id.clone()));
    }
    empirical_quantiles(&pooled_samples(participant, opts), grid, rule)
}

/// Sorted pooled samples for every cohort member, so quantile functions
/// for many grids can be read off without re-sorting.
#[derive(Debug, Clone)]
pub struct QuantileStore {
    sorted: Vec<Vec<f64>>,
}

impl QuantileStore {
    pub fn new(cohort: &Cohort, opts: &PoolingOptions) -> Result<Self, QuantileError> {
        let sorted = cohort
            .participants
            .par_iter()
            .map(|p| {
                if p.good_days.is_empty() {
                    return Err(QuantileError::NoDays(p.participant_id.clone()));
                }
                let mut s = pooled_samples(p, opts);
                check_finite(&s)?;
                s.sort_unstable_by(f64::total_cmp);
                Ok(s)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self, index: usize) -> &[f64] {
        &self.sorted[index]
    }

    /// Quantile functions in cohort order.
    pub fn quantile_functions(&self, grid: &Arc<ProbGrid>, rule: QuantileRule) -> Vec<QuantileFunction> {
        self.sorted
            .par_iter()
            .map(|s| quantiles_of_sorted(s, grid, rule))
            .collect()
    }
}
