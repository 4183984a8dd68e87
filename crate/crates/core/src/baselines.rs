//! Persistence reference forecasters.
//!
//! Both read only measurements at or before the forecast origin. Unreliable
//! readings are never repeated: `LastMeasurement` walks back to the latest
//! reliable value, `LastDay` substitutes the most recent reliable value at the
//! same time of day from an earlier day.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{ForecastRecord, ForecastSet};
use crate::grid_data::{PowerSeries, STEPS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PersistenceKind {
    LastMeasurement,
    LastDay,
}

impl PersistenceKind {
    /// Model identifier used in reports.
    pub fn model_id(self) -> &'static str {
        match self {
            Self::LastMeasurement => "persistence_last",
            Self::LastDay => "persistence_24h",
        }
    }
}

impl fmt::Display for PersistenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.model_id())
    }
}

fn origin_index(history: &PowerSeries, origin: DateTime<Utc>) -> Result<usize> {
    match history.offset_of(origin) {
        Some(i) if i >= 0 && (i as usize) < history.len() => Ok(i as usize),
        _ => Err(Error::Range(format!(
            "origin {origin} is not a step of the series {} .. {}",
            history.start(),
            history.end()
        ))),
    }
}

/// Every horizon step gets the latest reliable measurement at or before
/// `origin`.
pub fn persistence_last(history: &PowerSeries, origin: DateTime<Utc>, horizon: usize) -> Result<Vec<f64>> {
    let o = origin_index(history, origin)?;
    let i = (0..=o)
        .rev()
        .find(|&i| history.status()[i].is_reliable())
        .ok_or_else(|| Error::Data(format!("no reliable measurement at or before {origin}")))?;
    Ok(vec![history.values()[i]; horizon])
}

/// Step `k` repeats the measurement one day before its valid time; beyond
/// one day the first day's block is repeated.
pub fn persistence_last_day(history: &PowerSeries, origin: DateTime<Utc>, horizon: usize) -> Result<Vec<f64>> {
    let o = origin_index(history, origin)?;
    if o + 1 < STEPS_PER_DAY {
        return Err(Error::Data(format!(
            "persistence_last_day needs {STEPS_PER_DAY} steps of history before {origin}, have {}",
            o + 1
        )));
    }
    let values = history.values();
    let status = history.status();
    let mut day = Vec::with_capacity(STEPS_PER_DAY);
    for k in 1..=STEPS_PER_DAY {
        let src = o + k - STEPS_PER_DAY;
        let reliable = (0..=src / STEPS_PER_DAY)
            .map(|d| src - d * STEPS_PER_DAY)
            .find(|&i| status[i].is_reliable());
        let i = match reliable {
            Some(i) => i,
            // No reliable reading at this time of day: fall back to the
            // latest reliable one before it.
            None => (0..=src)
                .rev()
                .find(|&i| status[i].is_reliable())
                .ok_or_else(|| Error::Data(format!("no reliable measurement at or before {origin}")))?,
        };
        day.push(values[i]);
    }
    Ok((0..horizon).map(|k| day[k % STEPS_PER_DAY]).collect())
}

pub fn persistence(
    kind: PersistenceKind,
    history: &PowerSeries,
    origin: DateTime<Utc>,
    horizon: usize,
) -> Result<Vec<f64>> {
    match kind {
        PersistenceKind::LastMeasurement => persistence_last(history, origin, horizon),
        PersistenceKind::LastDay => persistence_last_day(history, origin, horizon),
    }
}

/// Persistence forecasts at each origin.
pub fn persistence_forecasts(
    kind: PersistenceKind,
    history: &PowerSeries,
    origins: &[DateTime<Utc>],
    horizon: usize,
) -> Result<ForecastSet> {
    let records = origins
        .iter()
        .map(|&origin| {
            Ok(ForecastRecord {
                origin,
                values: persistence(kind, history, origin, horizon)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ForecastSet { records })
}
