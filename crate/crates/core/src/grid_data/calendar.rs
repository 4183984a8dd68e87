use std::f64::consts::TAU;

use chrono::{DateTime, Datelike, Timelike, Utc};

/// Cyclic hour-of-day and weekday encoding (Monday = 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalendarFeatures {
    pub hour_sin: f64,
    pub hour_cos: f64,
    pub weekday_sin: f64,
    pub weekday_cos: f64,
}

pub fn calendar_features(t: DateTime<Utc>) -> CalendarFeatures {
    let hour = f64::from(t.hour()) + f64::from(t.minute()) / 60.0;
    let hour_angle = TAU * hour / 24.0;
    let weekday_angle = TAU * f64::from(t.weekday().num_days_from_monday()) / 7.0;
    CalendarFeatures {
        hour_sin: hour_angle.sin(),
        hour_cos: hour_angle.cos(),
        weekday_sin: weekday_angle.sin(),
        weekday_cos: weekday_angle.cos(),
    }
}
