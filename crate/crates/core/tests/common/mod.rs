#![allow(dead_code)]

use distmatch::ingest::{Cohort, DayRecord, Group, Participant, Provenance};
use distmatch::MINUTES_PER_DAY;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn day(id: &str, index: u8, counts: Vec<f64>) -> DayRecord {
    DayRecord {
        participant_id: id.to_string(),
        day_index: index,
        counts,
        wear_minutes: MINUTES_PER_DAY as u32,
        calibrated: true,
        reliable: true,
    }
}

pub fn person(id: &str, group: Group, age: f64, gender: &str, bmi: f64, days: Vec<Vec<f64>>) -> Participant {
    Participant {
        participant_id: id.to_string(),
        age,
        gender: gender.to_string(),
        bmi,
        group,
        followup_months: 100.0,
        event: false,
        good_days: days
            .into_iter()
            .enumerate()
            .map(|(k, c)| day(id, k as u8 + 1, c))
            .collect(),
    }
}

pub fn cohort(mut participants: Vec<Participant>) -> Cohort {
    participants.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    Cohort {
        participants,
        provenance: Provenance::default(),
    }
}

/// A day of whole counts: zero with probability `p_zero`, else up to `max`.
pub fn random_day(rng: &mut ChaCha8Rng, p_zero: f64, max: f64) -> Vec<f64> {
    (0..MINUTES_PER_DAY)
        .map(|_| {
            if rng.random_bool(p_zero) {
                0.0
            } else {
                (rng.random::<f64>() * max).floor()
            }
        })
        .collect()
}

/// Random cohort with close demographics so calipers bind on activity.
pub fn random_cohort(rng: &mut ChaCha8Rng, n_treated: usize, n_control: usize, days: usize) -> Cohort {
    let participants = (0..n_treated + n_control)
        .map(|i| {
            let group = if i < n_treated { Group::Treated } else { Group::Control };
            let max = 50.0 + rng.random::<f64>() * 1000.0;
            let p_zero = 0.2 + 0.6 * rng.random::<f64>();
            let days = (0..days).map(|_| random_day(rng, p_zero, max)).collect();
            let mut p = person(
                &format!("{:04}", i),
                group,
                (51 + rng.random_range(0..8)) as f64,
                if rng.random_bool(0.5) { "1" } else { "2" },
                25.0 + (rng.random_range(0..40) as f64) / 10.0,
                days,
            );
            p.followup_months = 1.0 + rng.random::<f64>() * 100.0;
            p.event = rng.random_bool(0.6);
            p
        })
        .collect();
    cohort(participants)
}

/// Random non-decreasing vector of length `n`.
pub fn monotone(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let mut acc = rng.random::<f64>() * scale;
    (0..n)
        .map(|_| {
            acc += rng.random::<f64>() * scale;
            acc
        })
        .collect()
}
