//! One-to-one random caliper matching of treated to control participants,
//! without replacement.
//!
//! A control is a candidate for a treated participant when age and BMI are
//! within their calipers, gender agrees (if required) and the Wasserstein
//! distance is at most the activity caliper `C`. All bounds are inclusive.
//! Treated participants are visited in a random order; each draws one
//! control uniformly from its candidates that are still unused.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::DistanceMatrix;
use crate::ingest::{Cohort, Participant};
use crate::seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaliperSpec {
    /// Years.
    pub age: f64,
    /// kg/m².
    pub bmi: f64,
    pub gender_exact: bool,
    /// Wasserstein caliper `C`; `f64::INFINITY` disables it.
    pub pa: f64,
}

impl Default for CaliperSpec {
    fn default() -> Self {
        Self {
            age: 3.0,
            bmi: 2.0,
            gender_exact: true,
            pa: f64::INFINITY,
        }
    }
}

impl CaliperSpec {
    pub fn with_pa(self, pa: f64) -> Self {
        Self { pa, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("age", self.age), ("bmi", self.bmi), ("pa", self.pa)] {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Invalid(format!("{name} caliper must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Age, BMI and gender conditions only.
    pub fn demographics_match(&self, treated: &Participant, control: &Participant) -> bool {
        (treated.age - control.age).abs() <= self.age
            && (treated.bmi - control.bmi).abs() <= self.bmi
            && (!self.gender_exact || treated.gender == control.gender)
    }
}

/// Why a treated participant ended up without a partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnmatchedReason {
    /// No control passes the age, BMI and gender calipers.
    NoDemographicCandidate,
    /// Demographic candidates exist but none is within the activity caliper.
    NoActivityCandidate,
    /// Every candidate was already taken by an earlier treated participant.
    CandidatesExhausted,
}

impl UnmatchedReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            UnmatchedReason::NoDemographicCandidate => "no_demographic_candidate",
            UnmatchedReason::NoActivityCandidate => "no_activity_candidate",
            UnmatchedReason::CandidatesExhausted => "candidates_exhausted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated: String,
    pub control: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    /// In processing order.
    pub pairs: Vec<MatchedPair>,
    pub seed: u64,
    pub unmatched: Vec<(String, UnmatchedReason)>,
}

impl MatchSet {
    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(out);
        writeln!(out, "treated_id,control_id")?;
        for p in &self.pairs {
            writeln!(out, "{},{}", p.treated, p.control)?;
        }
        out.flush()
    }
}

/// Reads a `treated_id,control_id` file.
pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<MatchedPair>> {
    let mut pairs = Vec::new();
    for (k, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("reading pairs", e))?;
        let line = line.trim();
        if k == 0 {
            if line != "treated_id,control_id" {
                return Err(Error::Invalid(format!(
                    "pairs file line 1: expected header treated_id,control_id, got {line:?}"
                )));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        match line.split_once(',') {
            Some((t, c)) if !t.is_empty() && !c.is_empty() && !c.contains(',') => pairs.push(MatchedPair {
                treated: t.to_string(),
                control: c.to_string(),
            }),
            _ => {
                return Err(Error::Invalid(format!(
                    "pairs file line {}: expected treated_id,control_id",
                    k + 1
                )))
            }
        }
    }
    Ok(pairs)
}

fn check_alignment(cohort: &Cohort, distances: &DistanceMatrix) -> Result<()> {
    let same = distances.n() == cohort.len()
        && cohort
            .participants
            .iter()
            .zip(distances.ids())
            .all(|(p, id)| &p.participant_id == id);
    if same {
        Ok(())
    } else {
        Err(Error::Invalid(
            "distance matrix ids do not match the cohort (order or membership)".into(),
        ))
    }
}

/// Controls passing the demographic calipers, per treated participant.
/// Independent of the activity caliper, so it is built once and re-filtered
/// for each `C`.
#[derive(Debug, Clone)]
pub struct DemographicCandidates {
    spec: CaliperSpec,
    treated: Vec<usize>,
    lists: Vec<Vec<usize>>,
}

impl DemographicCandidates {
    pub fn build(cohort: &Cohort, spec: &CaliperSpec) -> Self {
        let treated = cohort.treated_indices();
        let controls = cohort.control_indices();
        let lists = treated
            .par_iter()
            .map(|&t| {
                let tp = &cohort.participants[t];
                controls
                    .iter()
                    .copied()
                    .filter(|&c| spec.demographics_match(tp, &cohort.participants[c]))
                    .collect()
            })
            .collect();
        Self {
            spec: *spec,
            treated,
            lists,
        }
    }

    /// Narrows each list to controls within `pa_caliper` of the treated
    /// participant.
    pub fn with_activity_caliper(&self, distances: &DistanceMatrix, pa_caliper: f64) -> CandidateTable {
        let lists = self
            .treated
            .iter()
            .zip(&self.lists)
            .map(|(&t, l)| l.iter().copied().filter(|&c| distances.get(t, c) <= pa_caliper).collect())
            .collect();
        CandidateTable {
            spec: self.spec.with_pa(pa_caliper),
            treated: self.treated.clone(),
            demographic_counts: self.lists.iter().map(Vec::len).collect(),
            lists,
        }
    }
}

/// Full candidate lists (all four calipers) for every treated participant.
#[derive(Debug, Clone)]
pub struct CandidateTable {
    spec: CaliperSpec,
    treated: Vec<usize>,
    demographic_counts: Vec<usize>,
    lists: Vec<Vec<usize>>,
}

impl CandidateTable {
    pub fn build(cohort: &Cohort, spec: &CaliperSpec, distances: &DistanceMatrix) -> Result<Self> {
        spec.validate()?;
        check_alignment(cohort, distances)?;
        Ok(DemographicCandidates::build(cohort, spec).with_activity_caliper(distances, spec.pa))
    }

    pub fn spec(&self) -> &CaliperSpec {
        &self.spec
    }

    /// Cohort indices of treated participants, ascending.
    pub fn treated(&self) -> &[usize] {
        &self.treated
    }

    /// Candidate control indices for the `k`-th treated participant.
    pub fn candidates(&self, k: usize) -> &[usize] {
        &self.lists[k]
    }

    /// One random matching.
    pub fn draw(&self, cohort: &Cohort, seed: u64) -> MatchSet {
        let mut rng = seed::rng(seed);
        let mut order: Vec<usize> = (0..self.treated.len()).collect();
        order.shuffle(&mut rng);
        let mut used = vec![false; cohort.len()];
        let mut open = Vec::new();
        let mut pairs = Vec::new();
        let mut unmatched = Vec::new();
        let id = |i: usize| cohort.participants[i].participant_id.clone();
        for k in order {
            open.clear();
            open.extend(self.lists[k].iter().copied().filter(|&c| !used[c]));
            let t = self.treated[k];
            if open.is_empty() {
                let reason = if self.demographic_counts[k] == 0 {
                    UnmatchedReason::NoDemographicCandidate
                } else if self.lists[k].is_empty() {
                    UnmatchedReason::NoActivityCandidate
                } else {
                    UnmatchedReason::CandidatesExhausted
                };
                unmatched.push((id(t), reason));
                continue;
            }
            let c = open[rng.random_range(0..open.len())];
            used[c] = true;
            pairs.push(MatchedPair {
                treated: id(t),
                control: id(c),
            });
        }
        MatchSet {
            pairs,
            seed,
            unmatched,
        }
    }

    /// `reps` matchings with seeds `derive_seed(master_seed, i)`.
    pub fn draw_repeated(&self, cohort: &Cohort, reps: usize, master_seed: u64) -> Vec<MatchSet> {
        (0..reps)
            .into_par_iter()
            .map(|i| self.draw(cohort, repetition_seed(master_seed, i)))
            .collect()
    }
}

/// Seed of repetition `index` under `master_seed`.
pub fn repetition_seed(master_seed: u64, index: usize) -> u64 {
    seed::derive_seed(master_seed, index as u64)
}

/// Controls (cohort indices) within all calipers of treated participant
/// `treated` (a cohort index).
pub fn candidate_set(
    cohort: &Cohort,
    treated: usize,
    spec: &CaliperSpec,
    distances: &DistanceMatrix,
) -> Vec<usize> {
    let tp = &cohort.participants[treated];
    cohort
        .control_indices()
        .into_iter()
        .filter(|&c| {
            spec.demographics_match(tp, &cohort.participants[c]) && distances.get(treated, c) <= spec.pa
        })
        .collect()
}

pub fn match_once(cohort: &Cohort, spec: &CaliperSpec, distances: &DistanceMatrix, seed: u64) -> Result<MatchSet> {
    Ok(CandidateTable::build(cohort, spec, distances)?.draw(cohort, seed))
}

pub fn match_repeat(
    cohort: &Cohort,
    spec: &CaliperSpec,
    distances: &DistanceMatrix,
    reps: usize,
    master_seed: u64,
) -> Result<Vec<MatchSet>> {
    if reps == 0 {
        return Err(Error::Invalid("repetitions must be at least 1".into()));
    }
    Ok(CandidateTable::build(cohort, spec, distances)?.draw_repeated(cohort, reps, master_seed))
}

/// Re-checks a match set against the calipers and the one-to-one rule.
pub fn audit(cohort: &Cohort, spec: &CaliperSpec, distances: &DistanceMatrix, set: &MatchSet) -> Result<()> {
    let fail = |m: String| Err(Error::Invalid(format!("match audit: {m}")));
    let mut seen_t = std::collections::HashSet::new();
    let mut seen_c = std::collections::HashSet::new();
    for p in &set.pairs {
        let (Some(t), Some(c)) = (cohort.index_of(&p.treated), cohort.index_of(&p.control)) else {
            return fail(format!("unknown id in pair {} / {}", p.treated, p.control));
        };
        let (tp, cp) = (&cohort.participants[t], &cohort.participants[c]);
        if !tp.is_treated() || cp.is_treated() {
            return fail(format!("pair {} / {} has wrong groups", p.treated, p.control));
        }
        if !seen_t.insert(t) {
            return fail(format!("treated {} matched twice", p.treated));
        }
        if !seen_c.insert(c) {
            return fail(format!("control {} used twice", p.control));
        }
        if (tp.age - cp.age).abs() > spec.age {
            return fail(format!("age caliper violated by {} / {}", p.treated, p.control));
        }
        if (tp.bmi - cp.bmi).abs() > spec.bmi {
            return fail(format!("bmi caliper violated by {} / {}", p.treated, p.control));
        }
        if spec.gender_exact && tp.gender != cp.gender {
            return fail(format!("gender differs for {} / {}", p.treated, p.control));
        }
        if distances.get(t, c) > spec.pa {
            return fail(format!("activity caliper violated by {} / {}", p.treated, p.control));
        }
    }
    let n_treated = cohort.treated_indices().len();
    if set.pairs.len() + set.unmatched.len() != n_treated {
        return fail(format!(
            "{} pairs + {} unmatched != {} treated",
            set.pairs.len(),
            set.unmatched.len(),
            n_treated
        ));
    }
    Ok(())
}
