//! Synthetic cohorts with known ground truth.
//!
//! Each participant has a template day: every minute is active with a
//! probability that follows a smooth day/night curve, and active minutes
//! carry lognormal counts around a personal log-mean. Each observed day
//! copies the template and redraws a `day_noise` fraction of its minutes,
//! so `day_noise = 0` gives identical days. Survival times are exponential
//! with log-hazard `true_gamma * race + covariate effects`, censored at a
//! per-participant administrative end of follow-up and, with probability
//! `censoring_rate`, by earlier dropout.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, KeyValues};
use crate::ingest::{write_activity, write_demographics, write_mortality, DayRecord, DemographicRow, MortalityRow, RawRecords};
use crate::output::StagedDir;
use crate::seed;
use crate::{Error, Result, MINUTES_PER_DAY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub n_treated: usize,
    pub n_control: usize,
    pub days_min: u8,
    pub days_max: u8,
    /// Chance of one extra day flagged unreliable.
    pub bad_day_prob: f64,

    pub age_mean_treated: f64,
    pub age_mean_control: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub age_max: f64,
    pub bmi_mean_treated: f64,
    pub bmi_mean_control: f64,
    pub bmi_sd: f64,
    /// Probability of gender code `2`.
    pub gender_prob: f64,

    /// Mean of the personal log-mean of active-minute counts.
    pub log_mean: f64,
    /// Within-person sd of log counts on active minutes.
    pub log_sd: f64,
    /// Between-person sd of the personal log-mean.
    pub heterogeneity: f64,
    /// Shift of the personal log-mean for the treated group.
    pub treated_shift: f64,
    pub p_active_day: f64,
    pub p_active_night: f64,
    /// Minute of the day with the highest activity probability.
    pub peak_minute: f64,
    /// Fraction of template minutes redrawn on each observed day.
    pub day_noise: f64,

    pub true_gamma: f64,
    /// Log-hazard per year of age above 65.
    pub age_effect: f64,
    /// Log-hazard per BMI unit above 28.
    pub bmi_effect: f64,
    /// Log-hazard for gender code `2`.
    pub gender_effect: f64,
    /// Log-hazard per unit of personal log-mean above `log_mean`.
    pub activity_effect: f64,
    /// Baseline hazard per month.
    pub baseline_hazard: f64,
    pub followup_min: f64,
    pub followup_max: f64,
    pub censoring_rate: f64,

    pub treated_label: String,
    pub control_label: String,
    pub seed: u64,
    pub seed_generated: bool,
}

impl Default for SimSpec {
    fn default() -> Self {
        Self {
            n_treated: 100,
            n_control: 150,
            days_min: 3,
            days_max: 7,
            bad_day_prob: 0.1,
            age_mean_treated: 64.0,
            age_mean_control: 66.0,
            age_sd: 8.0,
            age_min: 51.0,
            age_max: 85.0,
            bmi_mean_treated: 30.0,
            bmi_mean_control: 28.0,
            bmi_sd: 5.0,
            gender_prob: 0.5,
            log_mean: 5.0,
            log_sd: 1.0,
            heterogeneity: 0.5,
            treated_shift: 0.0,
            p_active_day: 0.7,
            p_active_night: 0.05,
            peak_minute: 840.0,
            day_noise: 0.3,
            true_gamma: 0.1,
            age_effect: 0.08,
            bmi_effect: 0.0,
            gender_effect: 0.0,
            activity_effect: 0.0,
            baseline_hazard: 0.002,
            followup_min: 60.0,
            followup_max: 120.0,
            censoring_rate: 0.0,
            treated_label: "black".into(),
            control_label: "white".into(),
            seed: 0,
            seed_generated: false,
        }
    }
}

macro_rules! take_fields {
    ($kv:expr, $spec:expr, $($field:ident),* $(,)?) => {
        $(if let Some(v) = $kv.take(stringify!($field))? { $spec.$field = v; })*
    };
}

impl SimSpec {
    /// Reads a simulation file; every key is the field name.
    pub fn from_config(mut kv: KeyValues) -> std::result::Result<Self, ConfigError> {
        let mut spec = SimSpec::default();
        take_fields!(
            kv, spec, n_treated, n_control, days_min, days_max, bad_day_prob, age_mean_treated,
            age_mean_control, age_sd, age_min, age_max, bmi_mean_treated, bmi_mean_control, bmi_sd,
            gender_prob, log_mean, log_sd, heterogeneity, treated_shift, p_active_day, p_active_night,
            peak_minute, day_noise, true_gamma, age_effect, bmi_effect, gender_effect, activity_effect,
            baseline_hazard, followup_min, followup_max, censoring_rate, treated_label, control_label,
        );
        match kv.take::<u64>("seed")? {
            Some(s) => spec.seed = s,
            None => {
                spec.seed = seed::fresh_seed();
                spec.seed_generated = true;
            }
        }
        kv.finish()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(format!("simulation spec: {m}")));
        if self.n_treated == 0 || self.n_control == 0 {
            return bad("n_treated and n_control must be at least 1".into());
        }
        if self.days_min == 0 || self.days_min > self.days_max || self.days_max > 7 {
            return bad("need 1 <= days_min <= days_max <= 7".into());
        }
        for (name, v) in [
            ("bad_day_prob", self.bad_day_prob),
            ("gender_prob", self.gender_prob),
            ("p_active_day", self.p_active_day),
            ("p_active_night", self.p_active_night),
            ("day_noise", self.day_noise),
            ("censoring_rate", self.censoring_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("age_sd", self.age_sd),
            ("bmi_sd", self.bmi_sd),
            ("log_sd", self.log_sd),
            ("heterogeneity", self.heterogeneity),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number"));
            }
        }
        if !(self.age_min < self.age_max) {
            return bad("age_min must be below age_max".into());
        }
        if !(self.baseline_hazard > 0.0) {
            return bad("baseline_hazard must be positive".into());
        }
        if !(self.followup_min > 0.0 && self.followup_min <= self.followup_max) {
            return bad("need 0 < followup_min <= followup_max".into());
        }
        if self.treated_label == self.control_label || self.treated_label.is_empty() {
            return bad("group labels must be distinct and non-empty".into());
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n_treated + self.n_control
    }

    /// Id of the `i`-th simulated participant; treated come first.
    pub fn participant_id(&self, i: usize) -> String {
        format!("{}", 100_000 + i)
    }

    fn p_active(&self, minute: usize) -> f64 {
        let phase = 2.0 * PI * (minute as f64 - self.peak_minute) / MINUTES_PER_DAY as f64;
        let w = (0.5 * (1.0 + phase.cos())).powi(2);
        self.p_active_night + (self.p_active_day - self.p_active_night) * w
    }
}

struct Simulated {
    days: Vec<DayRecord>,
    demographics: DemographicRow,
    mortality: MortalityRow,
}

fn truncated_normal<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("validated sd");
    for _ in 0..1000 {
        let v = normal.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

fn simulate_one(spec: &SimSpec, i: usize) -> Simulated {
    let id = spec.participant_id(i);
    let treated = i < spec.n_treated;
    let mut rng = seed::rng(seed::derive_seed(spec.seed, i as u64));

    let (age_mean, bmi_mean) = if treated {
        (spec.age_mean_treated, spec.bmi_mean_treated)
    } else {
        (spec.age_mean_control, spec.bmi_mean_control)
    };
    let age = truncated_normal(&mut rng, age_mean, spec.age_sd, spec.age_min, spec.age_max).round();
    let bmi = (truncated_normal(&mut rng, bmi_mean, spec.bmi_sd, 15.0, 60.0) * 10.0).round() / 10.0;
    let gender2 = rng.random_bool(spec.gender_prob);
    let person_mean = spec.log_mean
        + if treated { spec.treated_shift } else { 0.0 }
        + spec.heterogeneity * rng.sample::<f64, _>(rand_distr::StandardNormal);

    let count_dist = Normal::new(person_mean, spec.log_sd).expect("validated sd");
    let draw_minute = |rng: &mut rand_chacha::ChaCha8Rng, m: usize| -> f64 {
        if rng.random_bool(spec.p_active(m)) {
            count_dist.sample(rng).exp().round()
        } else {
            0.0
        }
    };
    let template: Vec<f64> = (0..MINUTES_PER_DAY).map(|m| draw_minute(&mut rng, m)).collect();
    let n_good = rng.random_range(spec.days_min..=spec.days_max);
    let extra_bad = n_good < 7 && rng.random_bool(spec.bad_day_prob);
    let n_days = n_good + extra_bad as u8;
    let bad_index = if extra_bad { rng.random_range(1..=n_days) } else { 0 };
    let days = (1..=n_days)
        .map(|day_index| {
            let counts: Vec<f64> = template
                .iter()
                .enumerate()
                .map(|(m, &c)| {
                    if spec.day_noise > 0.0 && rng.random_bool(spec.day_noise) {
                        draw_minute(&mut rng, m)
                    } else {
                        c
                    }
                })
                .collect();
            DayRecord {
                participant_id: id.clone(),
                day_index,
                counts,
                wear_minutes: MINUTES_PER_DAY as u32,
                calibrated: true,
                reliable: day_index != bad_index,
            }
        })
        .collect();

    let eta = spec.true_gamma * treated as u8 as f64
        + spec.age_effect * (age - 65.0)
        + spec.bmi_effect * (bmi - 28.0)
        + spec.gender_effect * gender2 as u8 as f64
        + spec.activity_effect * (person_mean - spec.log_mean);
    let event_time = Exp::new(spec.baseline_hazard * eta.exp()).expect("positive rate").sample(&mut rng);
    let mut censor = rng.random_range(spec.followup_min..=spec.followup_max);
    if rng.random_bool(spec.censoring_rate) {
        censor *= rng.random::<f64>();
    }
    let (time, event) = if event_time <= censor {
        (event_time, true)
    } else {
        (censor, false)
    };
    let followup_months = ((time * 1e4).round() / 1e4).max(1e-4);

    Simulated {
        days,
        demographics: DemographicRow {
            age: Some(age),
            gender: Some(if gender2 { "2" } else { "1" }.to_string()),
            bmi: Some(bmi),
            race: Some(if treated { &spec.treated_label } else { &spec.control_label }.clone()),
        },
        mortality: MortalityRow {
            followup_months: Some(followup_months),
            event: Some(event),
        },
    }
}

/// Simulated tables in memory.
pub fn generate_raw(spec: &SimSpec) -> Result<RawRecords> {
    spec.validate()?;
    let people: Vec<Simulated> = (0..spec.n()).into_par_iter().map(|i| simulate_one(spec, i)).collect();
    let mut raw = RawRecords::default();
    for (i, p) in people.into_iter().enumerate() {
        let id = spec.participant_id(i);
        raw.days.insert(id.clone(), p.days);
        raw.demographics.insert(id.clone(), p.demographics);
        raw.mortality.insert(id, p.mortality);
    }
    Ok(raw)
}

/// Writes `activity.csv`, `demographics.csv`, `mortality.csv` and
/// `simulation.json` into `dir`.
pub fn generate(spec: &SimSpec, dir: &Path) -> Result<()> {
    let raw = generate_raw(spec)?;
    let staged = StagedDir::new(dir)?;
    staged.write("activity.csv", |w| write_activity(&raw, w))?;
    staged.write("demographics.csv", |w| write_demographics(&raw, w))?;
    staged.write("mortality.csv", |w| write_mortality(&raw, w))?;
    let json = serde_json::to_string_pretty(spec).map_err(|e| Error::Invalid(e.to_string()))?;
    staged.write_string("simulation.json", &(json + "\n"))?;
    staged.commit()?;
    Ok(())
}
