use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::basis::{project, Basis, BasisKind, MAX_BASIS};
use crate::ingest::{Cohort, Participant};
use crate::MINUTES_PER_DAY;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("basis size K must be in 1..={MAX_BASIS}, got {0}")]
    BasisSize(usize),
    #[error("participant {0} has no good days")]
    NoDays(String),
    #[error("design has no rows")]
    Empty,
    #[error("design row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("unknown participant id {0}")]
    UnknownId(String),
}

/// `X_i(s)`: mean activity count at each minute of the day over the
/// participant's good days.
pub fn functional_profile(participant: &Participant) -> Result<Vec<f64>, DesignError> {
    let days = &participant.good_days;
    if days.is_empty() {
        return Err(DesignError::NoDays(participant.participant_id.clone()));
    }
    let mut profile = vec![0.0; MINUTES_PER_DAY];
    for d in days {
        for (acc, c) in profile.iter_mut().zip(&d.counts) {
            *acc += c;
        }
    }
    let n = days.len() as f64;
    profile.iter_mut().for_each(|v| *v /= n);
    Ok(profile)
}

/// Centring and scaling applied to one design column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

impl Standardization {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, sd }
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    /// Coefficient on the original scale.
    pub fn coefficient_on_original_scale(&self, coef: f64) -> f64 {
        coef / self.sd
    }
}

/// Survival data with covariates, one row per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxDesign {
    pub ids: Vec<String>,
    pub times: Vec<f64>,
    pub events: Vec<bool>,
    /// Row-major, `n x p`.
    pub x: Vec<f64>,
    pub names: Vec<String>,
    /// Per column; `None` when the column is used as given.
    pub standardization: Vec<Option<Standardization>>,
    /// Indices of the functional-score columns (penalized by the optional ridge).
    pub functional_columns: Vec<usize>,
    pub basis: Option<Basis>,
}

impl CoxDesign {
    /// A plain design. `x` is row-major with `names.len()` columns.
    pub fn new(times: Vec<f64>, events: Vec<bool>, x: Vec<f64>, names: Vec<String>) -> Result<Self, DesignError> {
        let n = times.len();
        let p = names.len();
        if n == 0 || p == 0 {
            return Err(DesignError::Empty);
        }
        if events.len() != n || x.len() != n * p {
            return Err(DesignError::BadRow {
                row: 0,
                message: format!(
                    "shape mismatch: {n} times, {} events, {} cells for {p} columns",
                    events.len(),
                    x.len()
                ),
            });
        }
        for (i, t) in times.iter().enumerate() {
            if !(t.is_finite() && *t > 0.0) {
                return Err(DesignError::BadRow {
                    row: i,
                    message: format!("followup time must be positive, got {t}"),
                });
            }
            if let Some(v) = x[i * p..(i + 1) * p].iter().find(|v| !v.is_finite()) {
                return Err(DesignError::BadRow {
                    row: i,
                    message: format!("non-finite covariate {v}"),
                });
            }
        }
        Ok(Self {
            ids: (0..n).map(|i| i.to_string()).collect(),
            times,
            events,
            x,
            standardization: vec![None; p],
            functional_columns: Vec::new(),
            basis: None,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn n_events(&self) -> usize {
        self.events.iter().filter(|&&e| e).count()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.row(i)[j]).collect()
    }

    /// Copy with column `j` replaced.
    pub fn with_column(&self, j: usize, values: &[f64]) -> Self {
        let mut out = self.clone();
        let p = self.p();
        for (i, v) in values.iter().enumerate() {
            out.x[i * p + j] = *v;
        }
        out
    }
}

/// Index of the race indicator in designs built by [`ScoreTable`].
pub const RACE_COLUMN: usize = 0;

/// Per-participant covariates and functional scores for a whole cohort,
/// computed once; designs for subsets are then row selections.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    basis: Basis,
    rows: Vec<ScoreRow>,
}

#[derive(Debug, Clone)]
struct ScoreRow {
    id: String,
    time: f64,
    event: bool,
    treated: bool,
    age: f64,
    gender: String,
    bmi: f64,
    scores: Vec<f64>,
}

impl ScoreTable {
    pub fn new(cohort: &Cohort, kind: BasisKind, k: usize) -> Result<Self, DesignError> {
        use rayon::prelude::*;
        let basis = Basis::new(kind, k).map_err(|_| DesignError::BasisSize(k))?;
        let matrix = basis.minute_matrix();
        let rows = cohort
            .participants
            .par_iter()
            .map(|p| {
                let profile = functional_profile(p)?;
                Ok(ScoreRow {
                    id: p.participant_id.clone(),
                    time: p.followup_months,
                    event: p.event,
                    treated: p.is_treated(),
                    age: p.age,
                    gender: p.gender.clone(),
                    bmi: p.bmi,
                    scores: project(&profile, &matrix),
                })
            })
            .collect::<Result<Vec<_>, DesignError>>()?;
        Ok(Self { basis, rows })
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Functional scores of cohort member `index`.
    pub fn scores(&self, index: usize) -> &[f64] {
        &self.rows[index].scores
    }

    /// Design over cohort members `indices`, in that order.
    ///
    /// Columns: race (1 = treated), age, gender (1 = not the first label in
    /// sort order), BMI, then the `K` functional scores. Age and BMI are
    /// standardized to mean 0 and sd 1 over the selected rows; the record is
    /// kept in [`CoxDesign::standardization`].
    pub fn design(&self, indices: &[usize]) -> Result<CoxDesign, DesignError> {
        if indices.is_empty() {
            return Err(DesignError::Empty);
        }
        let rows: Vec<&ScoreRow> = indices.iter().map(|&i| &self.rows[i]).collect();
        let k = self.basis.k;
        let p = 4 + k;
        let reference = rows.iter().map(|r| r.gender.as_str()).min().unwrap_or_default();
        let ages: Vec<f64> = rows.iter().map(|r| r.age).collect();
        let bmis: Vec<f64> = rows.iter().map(|r| r.bmi).collect();
        let (age_std, bmi_std) = (Standardization::of(&ages), Standardization::of(&bmis));

        let mut x = Vec::with_capacity(rows.len() * p);
        for r in &rows {
            x.push(if r.treated { 1.0 } else { 0.0 });
            x.push(age_std.apply(r.age));
            x.push(if r.gender == reference { 0.0 } else { 1.0 });
            x.push(bmi_std.apply(r.bmi));
            x.extend_from_slice(&r.scores);
        }
        let mut names: Vec<String> = ["race", "age", "gender", "bmi"].iter().map(|s| s.to_string()).collect();
        names.extend((1..=k).map(|j| format!("b{j}")));
        let mut standardization = vec![None; p];
        standardization[1] = Some(age_std);
        standardization[3] = Some(bmi_std);
        let mut design = CoxDesign::new(
            rows.iter().map(|r| r.time).collect(),
            rows.iter().map(|r| r.event).collect(),
            x,
            names,
        )?;
        design.ids = rows.iter().map(|r| r.id.clone()).collect();
        design.standardization = standardization;
        design.functional_columns = (4..p).collect();
        design.basis = Some(self.basis);
        Ok(design)
    }

    /// Design over the given participant ids.
    pub fn design_for_ids(&self, cohort: &Cohort, ids: &[&str]) -> Result<CoxDesign, DesignError> {
        let indices = ids
            .iter()
            .map(|id| cohort.index_of(id).ok_or_else(|| DesignError::UnknownId(id.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        self.design(&indices)
    }
}

/// Design for `indices` of `cohort` with a `K`-term basis.
pub fn functional_design(
    cohort: &Cohort,
    indices: &[usize],
    k: usize,
    kind: BasisKind,
) -> Result<CoxDesign, DesignError> {
    if k == 0 || k > MAX_BASIS {
        return Err(DesignError::BasisSize(k));
    }
    let sub = Cohort {
        participants: indices.iter().map(|&i| cohort.participants[i].clone()).collect(),
        provenance: cohort.provenance.clone(),
    };
    let table = ScoreTable::new(&sub, kind, k)?;
    table.design(&(0..sub.len()).collect::<Vec<_>>())
}
