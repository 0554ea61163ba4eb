//! The (C, J, interval) sensitivity grid.
//!
//! For each probability grid the pairwise distance matrix is built once.
//! Grids whose probability points coincide are computed once and their
//! cells copied, so aliased cells are bit-identical. For each caliper `C`
//! the matching is repeated `reps` times and each matched sample is fitted
//! with the functional Cox model; the race hazard ratio is averaged over
//! the repetitions that produced a fit.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{parse_bool, ConfigError, KeyValues};
use crate::distance::{pairwise_matrix, DistanceConfig};
use crate::ingest::{Cohort, NonwearRule};
use crate::matching::{CaliperSpec, DemographicCandidates, MatchSet};
use crate::output::StagedDir;
use crate::quantile::{build_grid, GridRule, Interval, PoolingOptions, ProbGrid, QuantileRule, QuantileStore};
use crate::seed;
use crate::survival::{fit_cox, hazard_ratio, BasisKind, CoxOptions, CoxOutcome, ScoreTable, Ties, RACE_COLUMN};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum HrMean {
    #[default]
    Arithmetic,
    Geometric,
}

impl fmt::Display for HrMean {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HrMean::Arithmetic => "arithmetic",
            HrMean::Geometric => "geometric",
        })
    }
}

impl FromStr for HrMean {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "arithmetic" => Ok(HrMean::Arithmetic),
            "geometric" => Ok(HrMean::Geometric),
            other => Err(format!("unknown hazard-ratio mean {other:?} (arithmetic, geometric)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub calipers: Vec<f64>,
    pub js: Vec<usize>,
    pub intervals: Vec<Interval>,
    pub reps: usize,
    pub master_seed: u64,
    /// True when no seed was configured and one was drawn.
    pub seed_generated: bool,
    pub basis_kind: BasisKind,
    pub basis_k: usize,
    pub demographic: CaliperSpec,
    pub grid_rule: GridRule,
    pub quantile_rule: QuantileRule,
    pub hr_mean: HrMean,
    pub cox: CoxOptions,
    pub pooling: PoolingOptions,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            calipers: vec![10.0, 20.0, 30.0, 40.0, 50.0, 100.0, 200.0, 300.0, 400.0],
            js: vec![1, 3, 4, 9, 19, 99, 199, 999, 1999],
            intervals: Interval::standard(),
            reps: 30,
            master_seed: 0,
            seed_generated: false,
            basis_kind: BasisKind::default(),
            basis_k: 10,
            demographic: CaliperSpec::default(),
            grid_rule: GridRule::Truncated,
            quantile_rule: QuantileRule::Linear,
            hr_mean: HrMean::Arithmetic,
            cox: CoxOptions::default(),
            pooling: PoolingOptions::default(),
        }
    }
}

/// Keys understood in a grid file. Everything but `seed` has a default.
pub const GRID_KEYS: &[(&str, &str)] = &[
    ("calipers", "comma-separated Wasserstein calipers C"),
    ("js", "comma-separated grid sizes J"),
    ("intervals", "semicolon-separated lo,hi pairs, e.g. 0,1;0.01,0.99"),
    ("reps", "matching repetitions per cell"),
    ("seed", "master seed (drawn and recorded when absent)"),
    ("basis", "periodic-bspline or fourier"),
    ("basis_k", "number of basis functions"),
    ("age_caliper", "age caliper in years"),
    ("bmi_caliper", "BMI caliper"),
    ("gender_exact", "require equal gender"),
    ("grid_rule", "truncated or closed"),
    ("quantile_rule", "linear or nearest"),
    ("hr_mean", "arithmetic or geometric"),
    ("ties", "breslow or efron"),
    ("ridge", "ridge penalty on the functional coefficients"),
    ("max_iter", "Newton iterations"),
    ("mask_nonwear", "pool only wear minutes"),
];

impl GridSpec {
    /// Reads a grid file, rejecting unknown keys.
    pub fn from_config(mut kv: KeyValues) -> std::result::Result<Self, ConfigError> {
        let mut spec = GridSpec::default();
        if let Some(v) = kv.take_list::<f64>("calipers")? {
            spec.calipers = v;
        }
        if let Some(v) = kv.take_list::<usize>("js")? {
            spec.js = v;
        }
        if let Some(v) = kv.take_with("intervals", Interval::parse_list)? {
            spec.intervals = v;
        }
        if let Some(v) = kv.take("reps")? {
            spec.reps = v;
        }
        match kv.take::<u64>("seed")? {
            Some(s) => spec.master_seed = s,
            None => {
                spec.master_seed = seed::fresh_seed();
                spec.seed_generated = true;
            }
        }
        if let Some(v) = kv.take("basis")? {
            spec.basis_kind = v;
        }
        if let Some(v) = kv.take("basis_k")? {
            spec.basis_k = v;
        }
        if let Some(v) = kv.take("age_caliper")? {
            spec.demographic.age = v;
        }
        if let Some(v) = kv.take("bmi_caliper")? {
            spec.demographic.bmi = v;
        }
        if let Some(v) = kv.take_with("gender_exact", parse_bool)? {
            spec.demographic.gender_exact = v;
        }
        if let Some(v) = kv.take("grid_rule")? {
            spec.grid_rule = v;
        }
        if let Some(v) = kv.take("quantile_rule")? {
            spec.quantile_rule = v;
        }
        if let Some(v) = kv.take("hr_mean")? {
            spec.hr_mean = v;
        }
        if let Some(v) = kv.take::<Ties>("ties")? {
            spec.cox.ties = v;
        }
        if let Some(v) = kv.take("ridge")? {
            spec.cox.ridge = v;
        }
        if let Some(v) = kv.take("max_iter")? {
            spec.cox.max_iter = v;
        }
        if let Some(v) = kv.take_with("mask_nonwear", parse_bool)? {
            spec.pooling.wear_mask = v.then(NonwearRule::default);
        }
        kv.finish()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("grid spec: {m}")));
        if self.calipers.is_empty() || self.js.is_empty() || self.intervals.is_empty() {
            return bad("calipers, js and intervals must be non-empty");
        }
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.calipers.iter().any(|c| !(*c > 0.0)) {
            return bad("calipers must be positive");
        }
        if self.basis_k == 0 || self.basis_k > crate::survival::MAX_BASIS {
            return bad("basis_k out of range");
        }
        if !(self.cox.ridge >= 0.0) {
            return bad("ridge must be non-negative");
        }
        self.demographic.with_pa(self.calipers[0]).validate()
    }
}

/// Outcome of one matching repetition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub seed: u64,
    pub pairs: usize,
    pub hr: Option<f64>,
    /// Why `hr` is missing.
    pub na_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCell {
    pub c: f64,
    pub j: usize,
    pub interval: Interval,
    pub j_eff: usize,
    /// Index of the distinct probability grid this cell was computed on.
    pub grid_group: usize,
    pub mean_hr: Option<f64>,
    pub mean_pairs: f64,
    pub n_success: usize,
    pub per_rep: Vec<RepResult>,
}

/// Seed of the cell at caliper `c` on `grid`. Depends on the grid's points
/// rather than its label, so aliased grids share seeds.
pub fn cell_seed(master_seed: u64, c: f64, grid: &ProbGrid) -> u64 {
    seed::derive_seed_path(master_seed, &[c.to_bits(), grid.points_key()])
}

fn fit_match(cohort: &Cohort, scores: &ScoreTable, set: &MatchSet, cox: &CoxOptions) -> RepResult {
    let indices: Vec<usize> = set
        .pairs
        .iter()
        .flat_map(|p| [&p.treated, &p.control])
        .map(|id| cohort.index_of(id).expect("matched ids come from the cohort"))
        .collect();
    let (hr, na_reason) = if indices.is_empty() {
        (None, Some("no_pairs".to_string()))
    } else {
        match scores.design(&indices) {
            Err(e) => (None, Some(format!("design: {e}"))),
            Ok(design) => {
                let outcome = fit_cox(&design, cox);
                match (&outcome, hazard_ratio(&outcome, RACE_COLUMN)) {
                    (CoxOutcome::Na(na), _) => (None, Some(na.reason.as_str().to_string())),
                    (_, Some(h)) if h.hr.is_finite() => (Some(h.hr), None),
                    _ => (None, Some("non_finite".to_string())),
                }
            }
        }
    };
    RepResult {
        seed: set.seed,
        pairs: set.n_pairs(),
        hr,
        na_reason,
    }
}

fn aggregate(reps: &[RepResult], how: HrMean) -> (Option<f64>, f64, usize) {
    let hrs: Vec<f64> = reps.iter().filter_map(|r| r.hr).collect();
    let mean_pairs = reps.iter().map(|r| r.pairs as f64).sum::<f64>() / reps.len() as f64;
    let mean_hr = if hrs.is_empty() {
        None
    } else {
        let n = hrs.len() as f64;
        Some(match how {
            HrMean::Arithmetic => hrs.iter().sum::<f64>() / n,
            HrMean::Geometric => (hrs.iter().map(|h| h.ln()).sum::<f64>() / n).exp(),
        })
    };
    (mean_hr, mean_pairs, hrs.len())
}

/// Runs every cell of `spec` on `cohort`. Cells come back ordered by `J`,
/// then interval, then `C`, each in the order given in the spec.
pub fn run_grid(cohort: &Cohort, spec: &GridSpec) -> Result<Vec<SensitivityCell>> {
    spec.validate()?;
    if cohort.is_empty() {
        return Err(Error::Invalid("cohort is empty".into()));
    }
    let mut grids: Vec<(usize, Interval, Arc<ProbGrid>)> = Vec::new();
    for &j in &spec.js {
        for &interval in &spec.intervals {
            grids.push((j, interval, Arc::new(build_grid(j, interval, spec.grid_rule)?)));
        }
    }
    let mut distinct: Vec<Arc<ProbGrid>> = Vec::new();
    let group_of: Vec<usize> = grids
        .iter()
        .map(|(_, _, g)| match distinct.iter().position(|d| d.same_points(g)) {
            Some(k) => k,
            None => {
                distinct.push(Arc::clone(g));
                distinct.len() - 1
            }
        })
        .collect();
    log::info!(
        "sensitivity: {} grids ({} distinct), {} calipers, {} reps",
        grids.len(),
        distinct.len(),
        spec.calipers.len(),
        spec.reps
    );

    let store = QuantileStore::new(cohort, &spec.pooling)?;
    let demographic = DemographicCandidates::build(cohort, &spec.demographic);
    let scores = ScoreTable::new(cohort, spec.basis_kind, spec.basis_k)?;
    let ids: Vec<String> = cohort.ids().iter().map(|s| s.to_string()).collect();

    // results[group][caliper] = per-rep results
    let mut results: Vec<Vec<Vec<RepResult>>> = Vec::with_capacity(distinct.len());
    for grid in &distinct {
        let config = DistanceConfig {
            grid: Arc::clone(grid),
            quantile_rule: spec.quantile_rule,
        };
        let qfs = store.quantile_functions(grid, spec.quantile_rule);
        let matrix = pairwise_matrix(&ids, &qfs, &config)?;
        let jobs: Vec<(usize, usize)> = (0..spec.calipers.len())
            .flat_map(|ci| (0..spec.reps).map(move |r| (ci, r)))
            .collect();
        let tables: Vec<_> = spec
            .calipers
            .iter()
            .map(|&c| demographic.with_activity_caliper(&matrix, c))
            .collect();
        let flat: Vec<RepResult> = jobs
            .par_iter()
            .map(|&(ci, r)| {
                let s = crate::matching::repetition_seed(cell_seed(spec.master_seed, spec.calipers[ci], grid), r);
                fit_match(cohort, &scores, &tables[ci].draw(cohort, s), &spec.cox)
            })
            .collect();
        let mut per_caliper: Vec<Vec<RepResult>> = vec![Vec::with_capacity(spec.reps); spec.calipers.len()];
        for ((ci, _), rep) in jobs.into_iter().zip(flat) {
            per_caliper[ci].push(rep);
        }
        log::info!("sensitivity: finished {}", config.describe());
        results.push(per_caliper);
    }

    let mut cells = Vec::with_capacity(grids.len() * spec.calipers.len());
    for ((j, interval, grid), &group) in grids.iter().zip(&group_of) {
        for (ci, &c) in spec.calipers.iter().enumerate() {
            let reps = results[group][ci].clone();
            let (mean_hr, mean_pairs, n_success) = aggregate(&reps, spec.hr_mean);
            cells.push(SensitivityCell {
                c,
                j: *j,
                interval: *interval,
                j_eff: grid.j_eff(),
                grid_group: group,
                mean_hr,
                mean_pairs,
                n_success,
                per_rep: reps,
            });
        }
    }
    Ok(cells)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Long CSV `C,J,interval,mean_HR,mean_pairs,n_success`.
pub fn write_long_csv<W: Write>(cells: &[SensitivityCell], mut w: W) -> std::io::Result<()> {
    writeln!(w, "C,J,interval,mean_HR,mean_pairs,n_success")?;
    for c in cells {
        writeln!(
            w,
            "{},{},\"{}\",{},{},{}",
            c.c,
            c.j,
            c.interval,
            fmt_opt(c.mean_hr),
            c.mean_pairs,
            c.n_success
        )?;
    }
    Ok(())
}

pub fn write_reps_csv<W: Write>(cells: &[SensitivityCell], mut w: W) -> std::io::Result<()> {
    writeln!(w, "C,J,interval,rep,seed,pairs,HR,na_reason")?;
    for c in cells {
        for (r, rep) in c.per_rep.iter().enumerate() {
            writeln!(
                w,
                "{},{},\"{}\",{},{},{},{},{}",
                c.c,
                c.j,
                c.interval,
                r,
                rep.seed,
                rep.pairs,
                fmt_opt(rep.hr),
                rep.na_reason.as_deref().unwrap_or("")
            )?;
        }
    }
    Ok(())
}

/// Columns of the pivot table: one per (J, distinct grid), listing the
/// intervals that share it.
pub fn pivot_columns(cells: &[SensitivityCell]) -> Vec<(usize, usize, Vec<Interval>)> {
    let mut cols: Vec<(usize, usize, Vec<Interval>)> = Vec::new();
    for c in cells {
        match cols.iter_mut().find(|(j, g, _)| *j == c.j && *g == c.grid_group) {
            Some((_, _, intervals)) => {
                if !intervals.contains(&c.interval) {
                    intervals.push(c.interval);
                }
            }
            None => cols.push((c.j, c.grid_group, vec![c.interval])),
        }
    }
    cols
}

/// Rows are calipers, columns are distinct grids; entries read
/// `mean_HR (mean_pairs)` with `NA` for cells without a fit.
pub fn pivot_table(cells: &[SensitivityCell]) -> String {
    let cols = pivot_columns(cells);
    let mut calipers: Vec<f64> = Vec::new();
    for c in cells {
        if !calipers.contains(&c.c) {
            calipers.push(c.c);
        }
    }
    let lookup: BTreeMap<(u64, usize, usize), &SensitivityCell> =
        cells.iter().map(|c| ((c.c.to_bits(), c.j, c.grid_group), c)).collect();

    let mut header = vec!["C".to_string()];
    header.extend(cols.iter().map(|(j, _, intervals)| {
        let names: Vec<String> = intervals.iter().map(|i| i.to_string()).collect();
        format!("J={j} {}", names.join(","))
    }));
    let mut rows = vec![header];
    for &c in &calipers {
        let mut row = vec![c.to_string()];
        for (j, g, _) in &cols {
            row.push(match lookup.get(&(c.to_bits(), *j, *g)) {
                None => String::new(),
                Some(cell) => format!(
                    "{} ({})",
                    cell.mean_hr.map_or_else(|| "NA".to_string(), |h| format!("{h:.2}")),
                    cell.mean_pairs.round()
                ),
            });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|k| rows.iter().map(|r| r[k].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    tool_version: &'static str,
    spec: &'a GridSpec,
    n_participants: usize,
    n_treated: usize,
    n_control: usize,
    n_cells: usize,
    n_distinct_grids: usize,
}

/// Writes `cells.csv`, `table.txt`, `reps.csv` and `metadata.json` into
/// `dir`.
pub fn emit_table(dir: &StagedDir, cells: &[SensitivityCell], spec: &GridSpec, cohort: &Cohort) -> Result<()> {
    dir.write("cells.csv", |w| write_long_csv(cells, w))?;
    dir.write_string("table.txt", &pivot_table(cells))?;
    dir.write("reps.csv", |w| write_reps_csv(cells, w))?;
    let meta = Metadata {
        tool_version: env!("CARGO_PKG_VERSION"),
        spec,
        n_participants: cohort.len(),
        n_treated: cohort.treated_indices().len(),
        n_control: cohort.control_indices().len(),
        n_cells: cells.len(),
        n_distinct_grids: cells.iter().map(|c| c.grid_group + 1).max().unwrap_or(0),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Invalid(e.to_string()))?;
    dir.write_string("metadata.json", &(json + "\n"))
}
