//! Issued forecasts and the forecast-archive CSV.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};
use crate::grid_data::{format_timestamp, parse_timestamp, step, PowerSeries, Status};

/// One multi-step forecast. `values[k - 1]` is valid at `origin + k * 15min`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub origin: DateTime<Utc>,
    pub values: Vec<f64>,
}

impl ForecastRecord {
    /// Valid time of horizon step `k` (1-based).
    pub fn valid_time(&self, k: usize) -> DateTime<Utc> {
        self.origin + step() * k as i32
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForecastSet {
    pub records: Vec<ForecastRecord>,
}

impl ForecastSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn origins(&self) -> Vec<DateTime<Utc>> {
        self.records.iter().map(|r| r.origin).collect()
    }

    /// Keeps records whose origin satisfies `keep`.
    pub fn filter_origins(&self, keep: impl Fn(DateTime<Utc>) -> bool) -> ForecastSet {
        ForecastSet {
            records: self.records.iter().filter(|r| keep(r.origin)).cloned().collect(),
        }
    }
}

/// Writes `origin,horizon_step,predicted_mw,actual_mw,status`. Steps without
/// a measurement in `truth` get an empty actual and status 1.
pub fn write_archive(path: impl AsRef<Path>, set: &ForecastSet, truth: &PowerSeries) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("origin,horizon_step,predicted_mw,actual_mw,status\n");
    for rec in &set.records {
        let origin = format_timestamp(rec.origin);
        for (k, v) in rec.values.iter().enumerate() {
            let step_no = k + 1;
            match truth.index_of(rec.valid_time(step_no)) {
                Some(i) => out.push_str(&format!(
                    "{origin},{step_no},{v},{},{}\n",
                    truth.values()[i],
                    truth.status()[i].flag()
                )),
                None => out.push_str(&format!("{origin},{step_no},{v},,1\n")),
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One line of a forecast archive.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveRow {
    pub origin: DateTime<Utc>,
    pub horizon_step: usize,
    pub predicted_mw: f64,
    pub actual_mw: Option<f64>,
    pub status: Status,
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<ArchiveRow>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse {
            path: path.to_owned(),
            line,
            msg: format!("invalid {what}"),
        };
        if rec.len() != 5 {
            return Err(bad("field count"));
        }
        let actual = match rec[3].trim() {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("actual_mw"))?),
        };
        rows.push(ArchiveRow {
            origin: parse_timestamp(&rec[0]).ok_or_else(|| bad("origin"))?,
            horizon_step: rec[1].trim().parse().map_err(|_| bad("horizon_step"))?,
            predicted_mw: rec[2].trim().parse().map_err(|_| bad("predicted_mw"))?,
            actual_mw: actual,
            status: rec[4]
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(Status::from_flag)
                .ok_or_else(|| bad("status"))?,
        });
    }
    Ok(rows)
}

/// Rebuilds forecast records from archive rows (rows of one origin must be
/// contiguous and ordered by step).
pub fn records_from_archive(rows: &[ArchiveRow]) -> Result<ForecastSet> {
    let mut set = ForecastSet::default();
    for row in rows {
        match set.records.last_mut() {
            Some(rec) if rec.origin == row.origin => {
                if row.horizon_step != rec.values.len() + 1 {
                    return Err(Error::Schema(format!(
                        "archive steps out of order at origin {}",
                        row.origin
                    )));
                }
                rec.values.push(row.predicted_mw);
            }
            _ => {
                if row.horizon_step != 1 {
                    return Err(Error::Schema(format!(
                        "archive origin {} does not start at step 1",
                        row.origin
                    )));
                }
                set.records.push(ForecastRecord {
                    origin: row.origin,
                    values: vec![row.predicted_mw],
                });
            }
        }
    }
    Ok(set)
}
