//! Measurement, weather and feature time series.
//!
//! Everything here lives on a fixed 15-minute axis. Weather arrives on a
//! coarser cadence and is interpolated onto that axis by [`align_weather`].

mod calendar;
mod io;
mod sun;
mod weather;

use chrono::{DateTime, Duration, Utc};
use ndarray::{s, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub use calendar::{calendar_features, CalendarFeatures};
pub use io::{
    format_timestamp, load_power_csv, load_transformer_meta, load_weather_csv, parse_timestamp, write_power_csv,
    write_transformer_meta, write_weather_csv, TransformerMeta,
};
pub use sun::{compute_sun_position, SunPosition, SOLAR_CONSTANT};
pub use weather::{align_weather, WeatherRecord, WEATHER_VARIABLES};

/// Length of one measurement interval in minutes.
pub const STEP_MINUTES: i64 = 15;
/// Measurement intervals per day.
pub const STEPS_PER_DAY: usize = 96;
/// Measurement intervals per hour.
pub const STEPS_PER_HOUR: usize = 4;

pub fn step() -> Duration {
    Duration::minutes(STEP_MINUTES)
}

/// Reliability flag attached to each measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Reliable = 0,
    Unreliable = 1,
}

impl Status {
    pub fn from_flag(flag: u8) -> Option<Self> {
        match flag {
            0 => Some(Status::Reliable),
            1 => Some(Status::Unreliable),
            _ => None,
        }
    }

    pub fn flag(self) -> u8 {
        self as u8
    }

    pub fn is_reliable(self) -> bool {
        self == Status::Reliable
    }
}

/// Gap-free 15-minute vertical power flow (MW, signed) with reliability flags.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSeries {
    start: DateTime<Utc>,
    values: Vec<f64>,
    status: Vec<Status>,
}

impl PowerSeries {
    pub fn new(start: DateTime<Utc>, values: Vec<f64>, status: Vec<Status>) -> Result<Self> {
        if values.len() != status.len() {
            return Err(Error::Dimension(format!(
                "{} values but {} status flags",
                values.len(),
                status.len()
            )));
        }
        Ok(Self { start, values, status })
    }

    /// Series with every point flagged reliable.
    pub fn reliable(start: DateTime<Utc>, values: Vec<f64>) -> Self {
        let status = vec![Status::Reliable; values.len()];
        Self { start, values, status }
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn status(&self) -> &[Status] {
        &self.status
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + step() * index as i32
    }

    /// Timestamp one step past the last value.
    pub fn end(&self) -> DateTime<Utc> {
        self.timestamp(self.len())
    }

    /// Index of `t` on this axis, if `t` lies on the 15-minute grid (it may be
    /// outside the series).
    pub fn offset_of(&self, t: DateTime<Utc>) -> Option<i64> {
        axis_offset(self.start, t)
    }

    /// Index of `t` if it is a timestamp of this series.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        self.offset_of(t)
            .filter(|&i| i >= 0 && (i as usize) < self.len())
            .map(|i| i as usize)
    }

    pub fn slice(&self, from: usize, to: usize) -> PowerSeries {
        PowerSeries {
            start: self.timestamp(from),
            values: self.values[from..to].to_vec(),
            status: self.status[from..to].to_vec(),
        }
    }

    pub fn into_parts(self) -> (DateTime<Utc>, Vec<f64>, Vec<Status>) {
        (self.start, self.values, self.status)
    }
}

pub fn axis_offset(start: DateTime<Utc>, t: DateTime<Utc>) -> Option<i64> {
    let secs = (t - start).num_seconds();
    let step_secs = STEP_MINUTES * 60;
    if secs.rem_euclid(step_secs) != 0 || (t - start).subsec_nanos() != 0 {
        return None;
    }
    Some(secs.div_euclid(step_secs))
}

/// Names of the exogenous feature columns, in model order.
pub const FEATURE_NAMES: [&str; 17] = [
    "u10",
    "v10",
    "u100",
    "v100",
    "t2m",
    "d2m",
    "fal",
    "ssrd",
    "sp",
    "tp",
    "sun_altitude",
    "sun_azimuth",
    "clear_sky_radiation",
    "hour_sin",
    "hour_cos",
    "weekday_sin",
    "weekday_cos",
];

pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

/// Exogenous features aligned to the 15-minute axis: interpolated weather,
/// sun position and cyclic calendar encoding. Row `i` belongs to
/// `start + i * 15min`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    start: DateTime<Utc>,
    columns: Array2<f64>,
}

impl FeatureFrame {
    pub fn new(start: DateTime<Utc>, columns: Array2<f64>) -> Result<Self> {
        if columns.ncols() != FEATURE_COUNT {
            return Err(Error::Dimension(format!(
                "feature frame needs {FEATURE_COUNT} columns, got {}",
                columns.ncols()
            )));
        }
        Ok(Self { start, columns })
    }

    /// Weather interpolated onto `len` steps from `start`, plus sun position
    /// at (`lat`, `lon`) and calendar columns.
    pub fn build(weather: &[WeatherRecord], lat: f64, lon: f64, start: DateTime<Utc>, len: usize) -> Result<Self> {
        let aligned = align_weather(weather, start, len)?;
        let mut columns = Array2::zeros((len, FEATURE_COUNT));
        columns.slice_mut(s![.., ..WEATHER_VARIABLES.len()]).assign(&aligned);
        for i in 0..len {
            let t = start + step() * i as i32;
            let sun = compute_sun_position(lat, lon, t)?;
            let cal = calendar_features(t);
            let mut row = columns.row_mut(i);
            row[10] = sun.altitude;
            row[11] = sun.azimuth;
            row[12] = sun.clear_sky_radiation;
            row[13] = cal.hour_sin;
            row[14] = cal.hour_cos;
            row[15] = cal.weekday_sin;
            row[16] = cal.weekday_cos;
        }
        Ok(Self { start, columns })
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn len(&self) -> usize {
        self.columns.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.nrows() == 0
    }

    pub fn columns(&self) -> ArrayView2<'_, f64> {
        self.columns.view()
    }

    pub fn column(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        FEATURE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|j| self.columns.column(j))
    }

    pub fn slice(&self, from: usize, to: usize) -> FeatureFrame {
        FeatureFrame {
            start: self.start + step() * from as i32,
            columns: self.columns.slice(s![from..to, ..]).to_owned(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn power_series_rejects_ragged_flags() {
        let t0 = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
        assert!(PowerSeries::new(t0, vec![1.0, 2.0], vec![Status::Reliable]).is_err());
    }

    #[test]
    fn index_lookup_respects_grid() {
        let t0 = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
        let s = PowerSeries::reliable(t0, vec![0.0; 8]);
        assert_eq!(s.index_of(t0 + Duration::minutes(30)), Some(2));
        assert_eq!(s.index_of(t0 + Duration::minutes(31)), None);
        assert_eq!(s.index_of(t0 - step()), None);
        assert_eq!(s.offset_of(t0 - step()), Some(-1));
        assert_eq!(s.end(), t0 + Duration::hours(2));
    }

    #[test]
    fn feature_frame_has_unit_cyclic_pairs() {
        let t0 = Utc.with_ymd_and_hms(2018, 3, 1, 0, 0, 0).unwrap();
        let weather: Vec<WeatherRecord> = (0..17)
            .map(|k| WeatherRecord::constant(t0 + Duration::hours(3 * k), 1.0))
            .collect();
        let frame = FeatureFrame::build(&weather, 51.0, 9.0, t0, 96 * 2).unwrap();
        assert_eq!(frame.columns().ncols(), 17);
        for row in frame.columns().rows() {
            assert!((row[13].powi(2) + row[14].powi(2) - 1.0).abs() < 1e-12);
            assert!((row[15].powi(2) + row[16].powi(2) - 1.0).abs() < 1e-12);
            if row[10] <= 0.0 {
                assert_eq!(row[12], 0.0);
            }
        }
    }
}
