//! Solar geometry from the NOAA solar calculator equations (Meeus-based,
//! roughly 0.01° accurate between 1800 and 2100).

use chrono::{DateTime, Utc};

use crate::error::{Error, Result};

/// Extraterrestrial irradiance, W/m².
pub const SOLAR_CONSTANT: f64 = 1361.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SunPosition {
    /// Degrees above the horizon, no refraction correction.
    pub altitude: f64,
    /// Degrees clockwise from north, in [0, 360).
    pub azimuth: f64,
    /// Clear-sky horizontal irradiance, W/m².
    pub clear_sky_radiation: f64,
}

pub fn compute_sun_position(lat: f64, lon: f64, t: DateTime<Utc>) -> Result<SunPosition> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(Error::Domain(format!("coordinates out of range: lat {lat}, lon {lon}")));
    }

    let unix = t.timestamp() as f64 + f64::from(t.timestamp_subsec_nanos()) * 1e-9;
    let julian_day = unix / 86_400.0 + 2_440_587.5;
    let jc = (julian_day - 2_451_545.0) / 36_525.0;

    let mean_long = (280.46646 + jc * (36000.76983 + jc * 0.0003032)).rem_euclid(360.0);
    let mean_anom = 357.52911 + jc * (35999.05029 - 0.0001537 * jc);
    let ecc = 0.016708634 - jc * (0.000042037 + 0.0000001267 * jc);
    let m = mean_anom.to_radians();
    let center = m.sin() * (1.914602 - jc * (0.004817 + 0.000014 * jc))
        + (2.0 * m).sin() * (0.019993 - 0.000101 * jc)
        + (3.0 * m).sin() * 0.000289;
    let true_long = mean_long + center;
    let omega = (125.04 - 1934.136 * jc).to_radians();
    let app_long = true_long - 0.00569 - 0.00478 * omega.sin();
    let mean_obliq = 23.0 + (26.0 + (21.448 - jc * (46.815 + jc * (0.00059 - jc * 0.001813))) / 60.0) / 60.0;
    let obliq = (mean_obliq + 0.00256 * omega.cos()).to_radians();
    let decl = (obliq.sin() * app_long.to_radians().sin()).asin();

    let y = (obliq / 2.0).tan().powi(2);
    let l0 = mean_long.to_radians();
    let eot_minutes = 4.0
        * (y * (2.0 * l0).sin() - 2.0 * ecc * m.sin() + 4.0 * ecc * y * m.sin() * (2.0 * l0).cos()
            - 0.5 * y * y * (4.0 * l0).sin()
            - 1.25 * ecc * ecc * (2.0 * m).sin())
        .to_degrees();

    let minutes_of_day = unix.rem_euclid(86_400.0) / 60.0;
    let true_solar_time = (minutes_of_day + eot_minutes + 4.0 * lon).rem_euclid(1440.0);
    let hour_angle = (true_solar_time / 4.0 - 180.0).to_radians();

    let phi = lat.to_radians();
    let cos_zenith = (phi.sin() * decl.sin() + phi.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let altitude = 90.0 - cos_zenith.acos().to_degrees();
    let azimuth = (180.0
        + hour_angle
            .sin()
            .atan2(hour_angle.cos() * phi.sin() - decl.tan() * phi.cos())
            .to_degrees())
    .rem_euclid(360.0);

    let clear_sky_radiation = if altitude > 0.0 {
        SOLAR_CONSTANT * altitude.to_radians().sin()
    } else {
        0.0
    };

    Ok(SunPosition {
        altitude,
        azimuth,
        clear_sky_radiation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};

    #[test]
    fn zenith_at_equator_on_equinox_noon() {
        // Equation of time is about -7.5 min on 20 March.
        let t = Utc.with_ymd_and_hms(2019, 3, 20, 12, 7, 30).unwrap();
        let sun = compute_sun_position(0.0, 0.0, t).unwrap();
        assert!(sun.altitude > 89.0, "altitude {}", sun.altitude);
    }

    #[test]
    fn winter_midnight_is_dark() {
        for (lat, lon) in [(51.0, 9.0), (40.0, -3.7), (60.0, 25.0)] {
            let t = Utc.with_ymd_and_hms(2018, 12, 21, 0, 0, 0).unwrap();
            let sun = compute_sun_position(lat, lon, t).unwrap();
            assert!(sun.altitude < 0.0);
            assert_eq!(sun.clear_sky_radiation, 0.0);
        }
    }

    #[test]
    fn rejects_bad_coordinates() {
        let t = Utc.with_ymd_and_hms(2018, 6, 21, 12, 0, 0).unwrap();
        assert!(matches!(compute_sun_position(91.0, 0.0, t), Err(Error::Domain(_))));
        assert!(compute_sun_position(0.0, -180.5, t).is_err());
    }

    #[test]
    fn altitude_rises_until_noon() {
        // Solar noon at lon 9E in late June is around 11:26 UTC.
        let day = Utc.with_ymd_and_hms(2018, 6, 21, 0, 0, 0).unwrap();
        let mut rising = Vec::new();
        for k in 0..96 {
            let t = day + Duration::minutes(15 * k);
            let alt = compute_sun_position(51.0, 9.0, t).unwrap().altitude;
            if t.format("%H:%M").to_string().as_str() > "11:15" {
                break;
            }
            if alt > 0.0 {
                rising.push(alt);
            }
        }
        assert!(rising.len() > 20);
        assert!(rising.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn radiation_monotone_in_altitude() {
        let day = Utc.with_ymd_and_hms(2018, 6, 21, 3, 0, 0).unwrap();
        let mut samples: Vec<SunPosition> = (0..40)
            .map(|k| compute_sun_position(51.0, 9.0, day + Duration::minutes(15 * k)).unwrap())
            .collect();
        samples.sort_by(|a, b| a.altitude.total_cmp(&b.altitude));
        assert!(samples
            .windows(2)
            .all(|w| w[1].clear_sky_radiation >= w[0].clear_sky_radiation));
    }

    /// Spencer's Fourier series for declination and equation of time.
    fn spencer_altitude(lat: f64, lon: f64, t: DateTime<Utc>) -> f64 {
        use chrono::{Datelike, Timelike};
        let hours = t.hour() as f64 + t.minute() as f64 / 60.0;
        let g = 2.0 * std::f64::consts::PI / 365.0 * (t.ordinal() as f64 - 1.0 + (hours - 12.0) / 24.0);
        let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
            + 0.000907 * (2.0 * g).sin()
            - 0.002697 * (3.0 * g).cos()
            + 0.00148 * (3.0 * g).sin();
        let eot = 229.18
            * (0.000075 + 0.001868 * g.cos()
                - 0.032077 * g.sin()
                - 0.014615 * (2.0 * g).cos()
                - 0.040849 * (2.0 * g).sin());
        let solar_minutes = hours * 60.0 + eot + 4.0 * lon;
        let ha = (solar_minutes / 4.0 - 180.0).to_radians();
        let phi = lat.to_radians();
        (phi.sin() * decl.sin() + phi.cos() * decl.cos() * ha.cos())
            .asin()
            .to_degrees()
    }

    #[test]
    fn agrees_with_independent_ephemeris() {
        let t = Utc.with_ymd_and_hms(2018, 6, 21, 12, 0, 0).unwrap();
        let ours = compute_sun_position(51.0, 9.0, t).unwrap().altitude;
        let reference = spencer_altitude(51.0, 9.0, t);
        assert!((ours - reference).abs() < 0.5, "{ours} vs {reference}");
        for h in [6, 9, 15, 18] {
            let t = Utc.with_ymd_and_hms(2018, 3, 3, h, 30, 0).unwrap();
            let a = compute_sun_position(48.0, -3.0, t).unwrap().altitude;
            assert!((a - spencer_altitude(48.0, -3.0, t)).abs() < 0.5);
        }
    }
}
