//! Loading activity, demographic and mortality tables, and building the
//! analysis cohort.
//!
//! File schemas (all CSV with a header row, missing values as empty fields):
//!
//! - activity: `participant_id,day_index,wear_minutes,calibrated,reliable,m1,...,m1440`.
//!   The `wear_minutes` column may be omitted, or left empty on a row; the
//!   wear time is then derived from the counts with a [`NonwearRule`].
//! - demographics: `participant_id,age,gender,bmi,race`
//! - mortality: `participant_id,followup_months,event`
//!
//! Booleans are `0`/`1`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::MINUTES_PER_DAY;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: bad header: {message}", path.display())]
    Header { path: PathBuf, message: String },

    #[error("{}:{line}{}: {message}", path.display(), column.map(|c| format!(" column {c}")).unwrap_or_default())]
    Malformed {
        path: PathBuf,
        line: u64,
        column: Option<usize>,
        message: String,
    },

    #[error("{}:{line}: duplicate day {day_index} for participant {participant_id}", path.display())]
    DuplicateDay {
        path: PathBuf,
        line: u64,
        participant_id: String,
        day_index: u8,
    },

    #[error("{}:{line}: duplicate participant {participant_id}", path.display())]
    DuplicateParticipant {
        path: PathBuf,
        line: u64,
        participant_id: String,
    },

    #[error("no participants survive the inclusion rules ({0})")]
    EmptyCohort(Provenance),
}

/// One participant-day of minute-level activity counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    pub participant_id: String,
    pub day_index: u8,
    pub counts: Vec<f64>,
    pub wear_minutes: u32,
    pub calibrated: bool,
    pub reliable: bool,
}

/// Wear-time convention for days that do not carry a wear column: a minute
/// is non-wear when it lies in a run of at least `min_zero_run` consecutive
/// zero counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonwearRule {
    pub min_zero_run: usize,
}

impl Default for NonwearRule {
    fn default() -> Self {
        Self { min_zero_run: 90 }
    }
}

impl NonwearRule {
    /// Per-minute wear flags.
    pub fn wear_mask(&self, counts: &[f64]) -> Vec<bool> {
        let mut mask = vec![true; counts.len()];
        let mut run_start = None;
        for i in 0..=counts.len() {
            let zero = i < counts.len() && counts[i] == 0.0;
            match (zero, run_start) {
                (true, None) => run_start = Some(i),
                (false, Some(s)) => {
                    if i - s >= self.min_zero_run {
                        mask[s..i].iter_mut().for_each(|m| *m = false);
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
        mask
    }

    pub fn wear_minutes(&self, counts: &[f64]) -> u32 {
        self.wear_mask(counts).iter().filter(|&&w| w).count() as u32
    }
}

/// Day-quality thresholds. A good day has strictly more than
/// `min_wear_minutes` of wear and, when required, both quality flags set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityPolicy {
    pub min_wear_minutes: u32,
    pub require_calibrated: bool,
    pub require_reliable: bool,
}

impl Default for QualityPolicy {
    fn default() -> Self {
        Self {
            min_wear_minutes: 600,
            require_calibrated: true,
            require_reliable: true,
        }
    }
}

pub fn good_day(day: &DayRecord, policy: &QualityPolicy) -> bool {
    day.wear_minutes > policy.min_wear_minutes
        && (day.calibrated || !policy.require_calibrated)
        && (day.reliable || !policy.require_reliable)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemographicRow {
    pub age: Option<f64>,
    pub gender: Option<String>,
    pub bmi: Option<f64>,
    pub race: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MortalityRow {
    pub followup_months: Option<f64>,
    pub event: Option<bool>,
}

/// Everything read from the three tables, keyed by participant id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawRecords {
    pub days: BTreeMap<String, Vec<DayRecord>>,
    pub demographics: BTreeMap<String, DemographicRow>,
    pub mortality: BTreeMap<String, MortalityRow>,
}

impl RawRecords {
    pub fn n_days(&self) -> usize {
        self.days.values().map(Vec::len).sum()
    }

    /// Adds a day, keeping each participant's days ordered by index.
    /// Returns false if that (participant, day) already exists.
    pub fn insert_day(&mut self, day: DayRecord) -> bool {
        let days = self.days.entry(day.participant_id.clone()).or_default();
        match days.binary_search_by_key(&day.day_index, |d| d.day_index) {
            Ok(_) => false,
            Err(pos) => {
                days.insert(pos, day);
                true
            }
        }
    }

    /// Ids present in any table.
    pub fn participant_ids(&self) -> BTreeSet<String> {
        self.days
            .keys()
            .chain(self.demographics.keys())
            .chain(self.mortality.keys())
            .cloned()
            .collect()
    }
}

/// Study arm. The treated group is matched to controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    Treated,
    Control,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: String,
    pub age: f64,
    pub gender: String,
    pub bmi: f64,
    pub group: Group,
    pub followup_months: f64,
    pub event: bool,
    pub good_days: Vec<DayRecord>,
}

impl Participant {
    pub fn is_treated(&self) -> bool {
        self.group == Group::Treated
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub remaining: usize,
}

/// Participant counts after each inclusion stage, in application order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stages: Vec<StageCount>,
}

impl Provenance {
    fn push(&mut self, stage: impl Into<String>, remaining: usize) {
        self.stages.push(StageCount {
            stage: stage.into(),
            remaining,
        });
    }

    /// `(stage, remaining, removed)` rows.
    pub fn removals(&self) -> Vec<(&str, usize, usize)> {
        let mut prev = None;
        self.stages
            .iter()
            .map(|s| {
                let removed = prev.map_or(0, |p: usize| p - s.remaining);
                prev = Some(s.remaining);
                (s.stage.as_str(), s.remaining, removed)
            })
            .collect()
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .stages
            .iter()
            .map(|s| format!("{}: {}", s.stage, s.remaining))
            .collect();
        f.write_str(&parts.join(", "))
    }
}

/// Cohort inclusion rules. Defaults: age strictly over 50, the two study
/// race labels, complete covariates and outcome, at least 3 good days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionRules {
    pub min_age_exclusive: f64,
    pub treated_label: String,
    pub control_label: String,
    pub min_good_days: usize,
    pub quality: QualityPolicy,
}

impl Default for InclusionRules {
    fn default() -> Self {
        Self {
            min_age_exclusive: 50.0,
            treated_label: "black".to_string(),
            control_label: "white".to_string(),
            min_good_days: 3,
            quality: QualityPolicy::default(),
        }
    }
}

impl InclusionRules {
    fn group_of(&self, label: &str) -> Option<Group> {
        if label == self.treated_label {
            Some(Group::Treated)
        } else if label == self.control_label {
            Some(Group::Control)
        } else {
            None
        }
    }

    fn label_of(&self, group: Group) -> &str {
        match group {
            Group::Treated => &self.treated_label,
            Group::Control => &self.control_label,
        }
    }
}

/// Analysis cohort, ordered by participant id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub participants: Vec<Participant>,
    pub provenance: Provenance,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.participants
            .iter()
            .map(|p| p.participant_id.as_str())
            .collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.participants
            .binary_search_by(|p| p.participant_id.as_str().cmp(id))
            .ok()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        self.indices_of(Group::Treated)
    }

    pub fn control_indices(&self) -> Vec<usize> {
        self.indices_of(Group::Control)
    }

    fn indices_of(&self, group: Group) -> Vec<usize> {
        self.participants
            .iter()
            .enumerate()
            .filter(|(_, p)| p.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    /// Converts back to raw tables, labelling groups with `rules`' labels.
    pub fn to_raw(&self, rules: &InclusionRules) -> RawRecords {
        let mut raw = RawRecords::default();
        for p in &self.participants {
            for d in &p.good_days {
                raw.insert_day(d.clone());
            }
            raw.demographics.insert(
                p.participant_id.clone(),
                DemographicRow {
                    age: Some(p.age),
                    gender: Some(p.gender.clone()),
                    bmi: Some(p.bmi),
                    race: Some(rules.label_of(p.group).to_string()),
                },
            );
            raw.mortality.insert(
                p.participant_id.clone(),
                MortalityRow {
                    followup_months: Some(p.followup_months),
                    event: Some(p.event),
                },
            );
        }
        raw
    }
}

fn positive_finite(x: Option<f64>) -> Option<f64> {
    x.filter(|v| v.is_finite() && *v > 0.0)
}

/// Applies the inclusion chain. Stages, in order: all ids seen in any table,
/// age over the threshold, race in a study group, complete covariates and
/// outcome, minimum number of good days.
pub fn build_cohort(raw: &RawRecords, rules: &InclusionRules) -> Result<Cohort, IngestError> {
    let mut provenance = Provenance::default();
    let ids = raw.participant_ids();
    provenance.push("all participants", ids.len());

    let empty = DemographicRow::default();
    let demo = |id: &str| raw.demographics.get(id).unwrap_or(&empty);

    let ids: Vec<&String> = ids
        .iter()
        .filter(|id| {
            demo(id)
                .age
                .is_some_and(|a| a.is_finite() && a > rules.min_age_exclusive)
        })
        .collect();
    provenance.push(format!("age over {}", rules.min_age_exclusive), ids.len());

    let ids: Vec<(&String, Group)> = ids
        .into_iter()
        .filter_map(|id| {
            demo(id)
                .race
                .as_deref()
                .and_then(|r| rules.group_of(r))
                .map(|g| (id, g))
        })
        .collect();
    provenance.push(
        format!(
            "race in {{{}, {}}}",
            rules.treated_label, rules.control_label
        ),
        ids.len(),
    );

    let mut complete = Vec::with_capacity(ids.len());
    for (id, group) in ids {
        let d = demo(id);
        let m = raw.mortality.get(id.as_str());
        let fields = (
            positive_finite(d.age),
            d.gender.as_ref().filter(|g| !g.is_empty()),
            positive_finite(d.bmi),
            m.and_then(|m| positive_finite(m.followup_months)),
            m.and_then(|m| m.event),
        );
        if let (Some(age), Some(gender), Some(bmi), Some(followup), Some(event)) = fields {
            complete.push(Participant {
                participant_id: id.clone(),
                age,
                gender: gender.clone(),
                bmi,
                group,
                followup_months: followup,
                event,
                good_days: Vec::new(),
            });
        }
    }
    provenance.push("complete covariates and outcome", complete.len());

    let mut participants = Vec::with_capacity(complete.len());
    for mut p in complete {
        p.good_days = raw
            .days
            .get(&p.participant_id)
            .map(|days| {
                days.iter()
                    .filter(|d| good_day(d, &rules.quality))
                    .cloned()
                    .collect()
            })
            .unwrap_or_default();
        if p.good_days.len() >= rules.min_good_days.max(1) {
            participants.push(p);
        }
    }
    provenance.push(
        format!("at least {} good days", rules.min_good_days.max(1)),
        participants.len(),
    );

    if participants.is_empty() {
        return Err(IngestError::EmptyCohort(provenance));
    }
    Ok(Cohort {
        participants,
        provenance,
    })
}

// ---------------------------------------------------------------------------
// CSV loading

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    let file = std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    let line = e.position().map_or(0, |p| p.line());
    IngestError::Malformed {
        path: path.to_path_buf(),
        line,
        column: None,
        message: e.to_string(),
    }
}

struct RowCtx<'a> {
    path: &'a Path,
    line: u64,
}

impl RowCtx<'_> {
    fn err(&self, column: usize, message: impl Into<String>) -> IngestError {
        IngestError::Malformed {
            path: self.path.to_path_buf(),
            line: self.line,
            column: Some(column + 1),
            message: message.into(),
        }
    }

    fn opt_f64(&self, rec: &csv::StringRecord, col: usize, name: &str) -> Result<Option<f64>, IngestError> {
        let s = rec[col].trim();
        if s.is_empty() {
            return Ok(None);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Some(v)),
            _ => Err(self.err(col, format!("{name}: expected a number, got {s:?}"))),
        }
    }

    fn opt_bool(&self, rec: &csv::StringRecord, col: usize, name: &str) -> Result<Option<bool>, IngestError> {
        match rec[col].trim() {
            "" => Ok(None),
            "0" => Ok(Some(false)),
            "1" => Ok(Some(true)),
            s => Err(self.err(col, format!("{name}: expected 0 or 1, got {s:?}"))),
        }
    }

    fn req_bool(&self, rec: &csv::StringRecord, col: usize, name: &str) -> Result<bool, IngestError> {
        self.opt_bool(rec, col, name)?
            .ok_or_else(|| self.err(col, format!("{name}: missing value")))
    }

    fn check_len(&self, rec: &csv::StringRecord, expected: usize) -> Result<(), IngestError> {
        if rec.len() != expected {
            return Err(IngestError::Malformed {
                path: self.path.to_path_buf(),
                line: self.line,
                column: None,
                message: format!("expected {expected} columns, found {}", rec.len()),
            });
        }
        Ok(())
    }

    fn id(&self, rec: &csv::StringRecord) -> Result<String, IngestError> {
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(self.err(0, "participant_id: missing value"));
        }
        Ok(id.to_string())
    }
}

fn expect_header(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<(), IngestError> {
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        return Err(IngestError::Header {
            path: path.to_path_buf(),
            message: format!("expected `{}`, found `{}`", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

/// Reads an activity table. Wear time missing from the file is derived with
/// `nonwear`.
pub fn load_activity(path: &Path, nonwear: &NonwearRule) -> Result<RawRecords, IngestError> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_wear = names.get(2) == Some(&"wear_minutes");
    let fixed: &[&str] = if has_wear {
        &["participant_id", "day_index", "wear_minutes", "calibrated", "reliable"]
    } else {
        &["participant_id", "day_index", "calibrated", "reliable"]
    };
    let minute_cols: Vec<String> = (1..=MINUTES_PER_DAY).map(|m| format!("m{m}")).collect();
    let mut expected: Vec<&str> = fixed.to_vec();
    expected.extend(minute_cols.iter().map(String::as_str));
    expect_header(path, &header, &expected)?;
    let first_minute = fixed.len();
    let (cal_col, rel_col) = (first_minute - 2, first_minute - 1);

    let mut raw = RawRecords::default();
    let mut rec = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_err(path, e)),
        }
        let ctx = RowCtx {
            path,
            line: rec.position().map_or(0, |p| p.line()),
        };
        ctx.check_len(&rec, expected.len())?;
        let participant_id = ctx.id(&rec)?;
        let day_index = match rec[1].trim().parse::<u8>() {
            Ok(d) if (1..=7).contains(&d) => d,
            _ => return Err(ctx.err(1, format!("day_index: expected 1..7, got {:?}", &rec[1]))),
        };
        let mut counts = Vec::with_capacity(MINUTES_PER_DAY);
        for col in first_minute..first_minute + MINUTES_PER_DAY {
            let s = rec[col].trim();
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => counts.push(v),
                Ok(v) if v < 0.0 => return Err(ctx.err(col, format!("negative activity count {s}"))),
                _ => return Err(ctx.err(col, format!("activity count: expected a non-negative number, got {s:?}"))),
            }
        }
        let wear_minutes = if has_wear && !rec[2].trim().is_empty() {
            match rec[2].trim().parse::<u32>() {
                Ok(w) if w as usize <= MINUTES_PER_DAY => w,
                _ => return Err(ctx.err(2, format!("wear_minutes: expected 0..1440, got {:?}", &rec[2]))),
            }
        } else {
            nonwear.wear_minutes(&counts)
        };
        let day = DayRecord {
            calibrated: ctx.req_bool(&rec, cal_col, "calibrated")?,
            reliable: ctx.req_bool(&rec, rel_col, "reliable")?,
            participant_id: participant_id.clone(),
            day_index,
            counts,
            wear_minutes,
        };
        if !raw.insert_day(day) {
            return Err(IngestError::DuplicateDay {
                path: path.to_path_buf(),
                line: ctx.line,
                participant_id,
                day_index,
            });
        }
    }
    Ok(raw)
}

pub fn load_demographics(path: &Path) -> Result<BTreeMap<String, DemographicRow>, IngestError> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = ["participant_id", "age", "gender", "bmi", "race"];
    expect_header(path, &header, &expected)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let ctx = RowCtx {
            path,
            line: rec.position().map_or(0, |p| p.line()),
        };
        ctx.check_len(&rec, expected.len())?;
        let id = ctx.id(&rec)?;
        let text = |col: usize| Some(rec[col].trim().to_string()).filter(|s| !s.is_empty());
        let row = DemographicRow {
            age: ctx.opt_f64(&rec, 1, "age")?,
            gender: text(2),
            bmi: ctx.opt_f64(&rec, 3, "bmi")?,
            race: text(4),
        };
        if out.insert(id.clone(), row).is_some() {
            return Err(IngestError::DuplicateParticipant {
                path: path.to_path_buf(),
                line: ctx.line,
                participant_id: id,
            });
        }
    }
    Ok(out)
}

pub fn load_mortality(path: &Path) -> Result<BTreeMap<String, MortalityRow>, IngestError> {
    let mut rdr = open_csv(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected = ["participant_id", "followup_months", "event"];
    expect_header(path, &header, &expected)?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let ctx = RowCtx {
            path,
            line: rec.position().map_or(0, |p| p.line()),
        };
        ctx.check_len(&rec, expected.len())?;
        let id = ctx.id(&rec)?;
        let row = MortalityRow {
            followup_months: ctx.opt_f64(&rec, 1, "followup_months")?,
            event: ctx.opt_bool(&rec, 2, "event")?,
        };
        if out.insert(id.clone(), row).is_some() {
            return Err(IngestError::DuplicateParticipant {
                path: path.to_path_buf(),
                line: ctx.line,
                participant_id: id,
            });
        }
    }
    Ok(out)
}

/// Loads all three tables; files are parsed concurrently.
pub fn load_tables(
    activity: &Path,
    demographics: &Path,
    mortality: &Path,
    nonwear: &NonwearRule,
) -> Result<RawRecords, IngestError> {
    let (act, (demo, mort)) = rayon::join(
        || load_activity(activity, nonwear),
        || rayon::join(|| load_demographics(demographics), || load_mortality(mortality)),
    );
    let mut raw = act?;
    raw.demographics = demo?;
    raw.mortality = mort?;
    Ok(raw)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes an activity table with an explicit wear column, participants in
/// id order and days in index order.
pub fn write_activity<W: Write>(raw: &RawRecords, mut w: W) -> std::io::Result<()> {
    write!(w, "participant_id,day_index,wear_minutes,calibrated,reliable")?;
    for m in 1..=MINUTES_PER_DAY {
        write!(w, ",m{m}")?;
    }
    writeln!(w)?;
    for days in raw.days.values() {
        for d in days {
            write!(
                w,
                "{},{},{},{},{}",
                d.participant_id, d.day_index, d.wear_minutes, d.calibrated as u8, d.reliable as u8
            )?;
            for c in &d.counts {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn write_demographics<W: Write>(raw: &RawRecords, mut w: W) -> std::io::Result<()> {
    writeln!(w, "participant_id,age,gender,bmi,race")?;
    for (id, r) in &raw.demographics {
        writeln!(
            w,
            "{id},{},{},{},{}",
            opt_num(r.age),
            r.gender.as_deref().unwrap_or(""),
            opt_num(r.bmi),
            r.race.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

pub fn write_mortality<W: Write>(raw: &RawRecords, mut w: W) -> std::io::Result<()> {
    writeln!(w, "participant_id,followup_months,event")?;
    for (id, r) in &raw.mortality {
        let event = r.event.map(|e| (e as u8).to_string()).unwrap_or_default();
        writeln!(w, "{id},{},{event}", opt_num(r.followup_months))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn day(id: &str, idx: u8, wear: u32, cal: bool, rel: bool) -> DayRecord {
        DayRecord {
            participant_id: id.into(),
            day_index: idx,
            counts: vec![1.0; MINUTES_PER_DAY],
            wear_minutes: wear,
            calibrated: cal,
            reliable: rel,
        }
    }

    #[test]
    fn good_day_thresholds() {
        let p = QualityPolicy::default();
        assert!(good_day(&day("a", 1, 601, true, true), &p));
        assert!(!good_day(&day("a", 1, 600, true, true), &p));
        assert!(!good_day(&day("a", 1, 1440, true, false), &p));
        assert!(!good_day(&day("a", 1, 1440, false, true), &p));
        let lax = QualityPolicy {
            require_reliable: false,
            ..p
        };
        assert!(good_day(&day("a", 1, 1440, true, false), &lax));
    }

    #[test]
    fn nonwear_runs() {
        let rule = NonwearRule { min_zero_run: 3 };
        let counts = [0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let mask = rule.wear_mask(&counts);
        assert_eq!(
            mask,
            vec![true, true, true, false, false, false, true, false, false, false]
        );
        assert_eq!(rule.wear_minutes(&counts), 4);
        assert_eq!(NonwearRule::default().wear_minutes(&[0.0; MINUTES_PER_DAY]), 0);
        assert_eq!(NonwearRule::default().wear_minutes(&[0.0; 89]), 89);
    }

    fn participant_raw(raw: &mut RawRecords, id: &str, age: f64, race: &str, good: u8) {
        for d in 1..=good {
            raw.insert_day(day(id, d, 700, true, true));
        }
        raw.demographics.insert(
            id.into(),
            DemographicRow {
                age: Some(age),
                gender: Some("1".into()),
                bmi: Some(27.0),
                race: Some(race.into()),
            },
        );
        raw.mortality.insert(
            id.into(),
            MortalityRow {
                followup_months: Some(100.0),
                event: Some(false),
            },
        );
    }

    #[test]
    fn age_fifty_and_two_good_days_are_excluded() {
        let mut raw = RawRecords::default();
        participant_raw(&mut raw, "a", 50.0, "black", 4);
        participant_raw(&mut raw, "b", 60.0, "white", 2);
        participant_raw(&mut raw, "c", 50.5, "white", 3);
        let cohort = build_cohort(&raw, &InclusionRules::default()).unwrap();
        assert_eq!(cohort.ids(), vec!["c"]);
    }

    #[test]
    fn empty_cohort_is_an_error() {
        let mut raw = RawRecords::default();
        participant_raw(&mut raw, "a", 40.0, "black", 4);
        match build_cohort(&raw, &InclusionRules::default()) {
            Err(IngestError::EmptyCohort(p)) => assert_eq!(p.stages[1].remaining, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_days_do_not_count() {
        let mut raw = RawRecords::default();
        participant_raw(&mut raw, "a", 70.0, "black", 2);
        raw.insert_day(day("a", 3, 500, true, true));
        raw.insert_day(day("a", 4, 800, true, false));
        assert!(build_cohort(&raw, &InclusionRules::default()).is_err());
        raw.insert_day(day("a", 5, 800, true, true));
        let c = build_cohort(&raw, &InclusionRules::default()).unwrap();
        let idx: Vec<u8> = c.participants[0].good_days.iter().map(|d| d.day_index).collect();
        assert_eq!(idx, vec![1, 2, 5]);
    }
}
