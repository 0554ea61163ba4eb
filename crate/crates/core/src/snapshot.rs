//! Binary cohort snapshot.
//!
//! Layout, little-endian throughout. Strings are a `u32` byte length
//! followed by UTF-8 bytes.
//!
//! ```text
//! magic      8 bytes  "DMCOHORT"
//! version    u32      1
//! stages     u32      then per stage: name (string), remaining (u64)
//! count      u32      then per participant:
//!   id (string), age (f64), gender (string), bmi (f64),
//!   group (u8: 0 treated, 1 control), followup_months (f64), event (u8),
//!   days (u32), then per day:
//!     day_index (u8), wear_minutes (u32), calibrated (u8), reliable (u8),
//!     1440 x count (f64)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::ingest::{Cohort, DayRecord, Group, Participant, Provenance, StageCount};
use crate::MINUTES_PER_DAY;

pub const MAGIC: &[u8; 8] = b"DMCOHORT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("{path}: not a cohort snapshot")]
    BadMagic { path: String },
    #[error("{path}: unsupported snapshot version {version} (this build reads {VERSION})")]
    Version { path: String, version: u32 },
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LE>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> std::io::Result<String> {
    let len = r.read_u32::<LE>()? as usize;
    if len > 1 << 20 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "string too long"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

pub fn write_cohort<W: Write>(w: &mut W, cohort: &Cohort) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(cohort.provenance.stages.len() as u32)?;
    for s in &cohort.provenance.stages {
        write_str(w, &s.stage)?;
        w.write_u64::<LE>(s.remaining as u64)?;
    }
    w.write_u32::<LE>(cohort.participants.len() as u32)?;
    for p in &cohort.participants {
        write_str(w, &p.participant_id)?;
        w.write_f64::<LE>(p.age)?;
        write_str(w, &p.gender)?;
        w.write_f64::<LE>(p.bmi)?;
        w.write_u8(match p.group {
            Group::Treated => 0,
            Group::Control => 1,
        })?;
        w.write_f64::<LE>(p.followup_months)?;
        w.write_u8(p.event as u8)?;
        w.write_u32::<LE>(p.good_days.len() as u32)?;
        for d in &p.good_days {
            w.write_u8(d.day_index)?;
            w.write_u32::<LE>(d.wear_minutes)?;
            w.write_u8(d.calibrated as u8)?;
            w.write_u8(d.reliable as u8)?;
            for &c in &d.counts {
                w.write_f64::<LE>(c)?;
            }
        }
    }
    Ok(())
}

fn invalid(message: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, message.to_string())
}

fn read_body<R: Read>(r: &mut R) -> std::io::Result<Cohort> {
    let n_stages = r.read_u32::<LE>()?;
    let mut provenance = Provenance::default();
    for _ in 0..n_stages {
        let stage = read_str(r)?;
        let remaining = r.read_u64::<LE>()? as usize;
        provenance.stages.push(StageCount { stage, remaining });
    }
    let n = r.read_u32::<LE>()?;
    let mut participants = Vec::with_capacity(n.min(1 << 16) as usize);
    for _ in 0..n {
        let participant_id = read_str(r)?;
        let age = r.read_f64::<LE>()?;
        let gender = read_str(r)?;
        let bmi = r.read_f64::<LE>()?;
        let group = match r.read_u8()? {
            0 => Group::Treated,
            1 => Group::Control,
            _ => return Err(invalid("bad group code")),
        };
        let followup_months = r.read_f64::<LE>()?;
        let event = r.read_u8()? != 0;
        let n_days = r.read_u32::<LE>()?;
        if n_days > 64 {
            return Err(invalid("too many days"));
        }
        let mut good_days = Vec::with_capacity(n_days as usize);
        for _ in 0..n_days {
            let day_index = r.read_u8()?;
            let wear_minutes = r.read_u32::<LE>()?;
            let calibrated = r.read_u8()? != 0;
            let reliable = r.read_u8()? != 0;
            let mut counts = vec![0.0; MINUTES_PER_DAY];
            r.read_f64_into::<LE>(&mut counts)?;
            good_days.push(DayRecord {
                participant_id: participant_id.clone(),
                day_index,
                counts,
                wear_minutes,
                calibrated,
                reliable,
            });
        }
        participants.push(Participant {
            participant_id,
            age,
            gender,
            bmi,
            group,
            followup_months,
            event,
            good_days,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(invalid("trailing bytes after cohort"));
    }
    if participants
        .windows(2)
        .any(|w| w[0].participant_id >= w[1].participant_id)
    {
        return Err(invalid("participants not in strictly ascending id order"));
    }
    Ok(Cohort {
        participants,
        provenance,
    })
}

pub fn read_cohort<R: Read>(r: &mut R, name: &str) -> Result<Cohort, SnapshotError> {
    let mut magic = [0u8; 8];
    let io = |source| SnapshotError::Io {
        path: name.to_string(),
        source,
    };
    r.read_exact(&mut magic).map_err(|_| SnapshotError::BadMagic { path: name.into() })?;
    if &magic != MAGIC {
        return Err(SnapshotError::BadMagic { path: name.into() });
    }
    let version = r.read_u32::<LE>().map_err(io)?;
    if version != VERSION {
        return Err(SnapshotError::Version {
            path: name.into(),
            version,
        });
    }
    read_body(r).map_err(|e| SnapshotError::Corrupt {
        path: name.into(),
        message: e.to_string(),
    })
}

pub fn save(path: &Path, cohort: &Cohort) -> crate::Result<()> {
    crate::output::write_atomic(path, |w| write_cohort(w, cohort))
}

pub fn load(path: &Path) -> crate::Result<Cohort> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| crate::Error::io(format!("opening {name}"), e))?;
    Ok(read_cohort(&mut std::io::BufReader::new(file), &name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_foreign_files() {
        let err = read_cohort(&mut &b"NOTACOHORT"[..], "x").unwrap_err();
        assert!(matches!(err, SnapshotError::BadMagic { .. }));
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&7u32.to_le_bytes());
        let err = read_cohort(&mut bytes.as_slice(), "x").unwrap_err();
        assert!(matches!(err, SnapshotError::Version { version: 7, .. }));
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let cohort = Cohort {
            participants: vec![Participant {
                participant_id: "1".into(),
                age: 60.0,
                gender: "2".into(),
                bmi: 30.0,
                group: Group::Control,
                followup_months: 12.0,
                event: true,
                good_days: vec![DayRecord {
                    participant_id: "1".into(),
                    day_index: 2,
                    counts: (0..MINUTES_PER_DAY).map(|m| m as f64).collect(),
                    wear_minutes: 700,
                    calibrated: true,
                    reliable: true,
                }],
            }],
            provenance: Provenance::default(),
        };
        let mut buf = Vec::new();
        write_cohort(&mut buf, &cohort).unwrap();
        assert_eq!(read_cohort(&mut buf.as_slice(), "x").unwrap(), cohort);
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_cohort(&mut buf.as_slice(), "x"),
            Err(SnapshotError::Corrupt { .. })
        ));
    }
}
