use chrono::{DateTime, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::step;
use crate::error::{Error, Result};

/// Weather variables in column order.
pub const WEATHER_VARIABLES: [&str; 10] = ["u10", "v10", "u100", "v100", "t2m", "d2m", "fal", "ssrd", "sp", "tp"];

/// One numerical weather forecast step for a single grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub valid_time: DateTime<Utc>,
    /// 10 m wind components, m/s.
    pub u10: f64,
    pub v10: f64,
    /// 100 m wind components, m/s.
    pub u100: f64,
    pub v100: f64,
    /// 2 m temperature and dewpoint, K.
    pub t2m: f64,
    pub d2m: f64,
    /// Forecast albedo in [0, 1].
    pub fal: f64,
    /// Surface solar radiation downwards, J/m².
    pub ssrd: f64,
    /// Surface pressure, Pa.
    pub sp: f64,
    /// Total precipitation, m.
    pub tp: f64,
}

impl WeatherRecord {
    pub fn from_values(valid_time: DateTime<Utc>, v: [f64; 10]) -> Self {
        Self {
            valid_time,
            u10: v[0],
            v10: v[1],
            u100: v[2],
            v100: v[3],
            t2m: v[4],
            d2m: v[5],
            fal: v[6],
            ssrd: v[7],
            sp: v[8],
            tp: v[9],
        }
    }

    pub fn values(&self) -> [f64; 10] {
        [
            self.u10, self.v10, self.u100, self.v100, self.t2m, self.d2m, self.fal, self.ssrd, self.sp, self.tp,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.values().iter().all(|v| v.is_finite())
            && (0.0..=1.0).contains(&self.fal)
            && self.ssrd >= 0.0
            && self.sp > 0.0
            && self.tp >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "weather record at {} violates physical bounds",
                self.valid_time
            )))
        }
    }

    #[cfg(test)]
    pub(crate) fn constant(valid_time: DateTime<Utc>, v: f64) -> Self {
        Self::from_values(valid_time, [v; 10])
    }
}

/// Linearly interpolates every weather variable onto `len` 15-minute steps
/// starting at `start`. Rows that coincide with a record time reproduce the
/// record exactly.
pub fn align_weather(records: &[WeatherRecord], start: DateTime<Utc>, len: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((len, WEATHER_VARIABLES.len()));
    if len == 0 {
        return Ok(out);
    }
    if records.windows(2).any(|w| w[1].valid_time <= w[0].valid_time) {
        return Err(Error::Schema(
            "weather records must be strictly increasing in time".into(),
        ));
    }
    let end = start + step() * (len as i32 - 1);
    match (records.first(), records.last()) {
        (Some(first), Some(last)) if first.valid_time <= start && end <= last.valid_time => {}
        _ => {
            return Err(Error::Coverage(format!(
                "weather records do not cover {start} .. {end}"
            )))
        }
    }

    let mut seg = 0;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let t = start + step() * i as i32;
        while seg + 1 < records.len() && records[seg + 1].valid_time <= t {
            seg += 1;
        }
        let left = &records[seg];
        if left.valid_time == t || seg + 1 == records.len() {
            for (dst, v) in row.iter_mut().zip(left.values()) {
                *dst = v;
            }
            continue;
        }
        let right = &records[seg + 1];
        let span = (right.valid_time - left.valid_time).num_milliseconds() as f64;
        let w = (t - left.valid_time).num_milliseconds() as f64 / span;
        for ((dst, a), b) in row.iter_mut().zip(left.values()).zip(right.values()) {
            *dst = a + (b - a) * w;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap()
    }

    #[test]
    fn midpoint_of_temperature() {
        let mut a = WeatherRecord::constant(t0(), 0.0);
        a.t2m = 280.0;
        let mut b = WeatherRecord::constant(t0() + Duration::hours(3), 0.0);
        b.t2m = 286.0;
        let out = align_weather(&[a, b], t0(), 13).unwrap();
        assert_eq!(out[[6, 4]], 283.0);
        assert_eq!(out[[0, 4]], 280.0);
        assert_eq!(out[[12, 4]], 286.0);
    }

    #[test]
    fn constant_stays_constant() {
        let recs: Vec<_> = (0..5)
            .map(|k| WeatherRecord::constant(t0() + Duration::hours(3 * k), 4.25))
            .collect();
        let out = align_weather(&recs, t0(), 49).unwrap();
        assert!(out.iter().all(|&v| v == 4.25));
    }

    #[test]
    fn uncovered_axis_is_rejected() {
        let recs: Vec<_> = (0..2)
            .map(|k| WeatherRecord::constant(t0() + Duration::hours(3 * k), 1.0))
            .collect();
        assert!(matches!(align_weather(&recs, t0(), 14), Err(Error::Coverage(_))));
        assert!(matches!(
            align_weather(&recs, t0() - Duration::minutes(15), 2),
            Err(Error::Coverage(_))
        ));
    }

    #[test]
    fn bounds_are_validated() {
        let mut r = WeatherRecord::constant(t0(), 0.5);
        r.sp = 101_000.0;
        assert!(r.validate().is_ok());
        r.fal = 1.5;
        assert!(r.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn matches_piecewise_linear_reference(
            knots in proptest::collection::vec(-50.0f64..50.0, 2..10),
            gap_steps in 1i64..16,
        ) {
            let recs: Vec<_> = knots
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let mut r = WeatherRecord::constant(t0() + Duration::minutes(15 * gap_steps * k as i64), 0.0);
                    r.u10 = v;
                    r
                })
                .collect();
            let len = (gap_steps as usize) * (knots.len() - 1) + 1;
            let out = align_weather(&recs, t0(), len).unwrap();
            for i in 0..len {
                let seg = (i / gap_steps as usize).min(knots.len() - 2);
                let frac = (i as f64 - (seg as i64 * gap_steps) as f64) / gap_steps as f64;
                let expected = knots[seg] + frac * (knots[seg + 1] - knots[seg]);
                proptest::prop_assert!((out[[i, 0]] - expected).abs() < 1e-9);
            }
        }
    }
}
