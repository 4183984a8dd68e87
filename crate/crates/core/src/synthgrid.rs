//! Synthetic transformer scenarios: load, PV and wind composed into a signed
//! vertical flow, with capacity step events that change the transformer's
//! characteristic part-way through the record.

use std::fs;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, TimeZone, Timelike, Utc, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_data::{
    align_weather, compute_sun_position, format_timestamp, step, write_power_csv, write_transformer_meta,
    write_weather_csv, PowerSeries, Status, TransformerMeta, WeatherRecord, SOLAR_CONSTANT, STEPS_PER_HOUR,
};

pub const CUT_IN_SPEED: f64 = 3.0;
pub const RATED_SPEED: f64 = 12.0;
pub const CUT_OUT_SPEED: f64 = 25.0;

/// Weather knots are generated every 3 hours.
const KNOT_STEPS: usize = 3 * STEPS_PER_HOUR;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Asset {
    Pv,
    Wind,
    Load,
}

/// From `date` onward the asset's output is `scale` times its original size.
/// A later event on the same asset replaces an earlier one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapacityEvent {
    pub date: DateTime<Utc>,
    pub asset: Asset,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub base_mw: f64,
    /// Relative size of the intraday swing.
    pub daily_amplitude: f64,
    /// Multiplier applied on Saturdays and Sundays.
    pub weekend_factor: f64,
    /// Standard deviation of the slowly varying load noise, MW.
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    /// First step; must fall on a 3-hour boundary.
    pub start: DateTime<Utc>,
    /// Exclusive end of the power record.
    pub end: DateTime<Utc>,
    pub load: LoadProfile,
    pub pv_capacity: f64,
    pub wind_capacity: f64,
    /// Long-run mean of the 100 m wind speed, m/s.
    pub mean_wind_speed: f64,
    pub events: Vec<CapacityEvent>,
    /// Scale of the error added to the weather forecast (0 = perfect).
    pub weather_noise: f64,
    /// Fraction of steps flagged unreliable.
    pub unreliable_fraction: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario {}: {m}", self.id)));
        if self.id.is_empty() || self.id.contains(['/', '\\']) {
            return bad("id must be a non-empty file name".into());
        }
        if !(-90.0..=90.0).contains(&self.lat) || !(-180.0..=180.0).contains(&self.lon) {
            return bad(format!("coordinates ({}, {}) out of range", self.lat, self.lon));
        }
        if self.end <= self.start + Duration::days(1) {
            return bad("span must exceed one day".into());
        }
        if self.start.timestamp() % (3 * 3600) != 0 || self.end.timestamp() % (15 * 60) != 0 {
            return bad("start must be on a 3-hour boundary and end on a 15-minute step".into());
        }
        let l = &self.load;
        let nonneg = [
            self.pv_capacity,
            self.wind_capacity,
            self.mean_wind_speed,
            l.base_mw,
            l.noise_sigma,
            l.weekend_factor,
            self.weather_noise,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("capacities, load parameters and noise levels must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&l.daily_amplitude) {
            return bad("daily amplitude must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.unreliable_fraction) {
            return bad("unreliable fraction must be in [0, 1)".into());
        }
        for e in &self.events {
            if e.date < self.start || e.date >= self.end {
                return bad(format!("event on {} lies outside the span", e.date));
            }
            if !(e.scale.is_finite() && e.scale >= 0.0) {
                return bad(format!("event scale {} must be non-negative", e.scale));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        ((self.end - self.start).num_minutes() / 15) as usize
    }

    /// Scale of `asset` at time `t`.
    pub fn scale_at(&self, asset: Asset, t: DateTime<Utc>) -> f64 {
        self.events
            .iter()
            .filter(|e| e.asset == asset && e.date <= t)
            .max_by_key(|e| e.date)
            .map_or(1.0, |e| e.scale)
    }
}

/// Ground-truth components on the power axis. `flow = load - pv - wind`.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub start: DateTime<Utc>,
    pub load: Vec<f64>,
    pub pv: Vec<f64>,
    pub wind: Vec<f64>,
    pub flow: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundle {
    pub spec: ScenarioSpec,
    /// Measured flow, with unreliable runs injected.
    pub power: PowerSeries,
    /// Noisy weather forecast at 3-hour cadence.
    pub weather: Vec<WeatherRecord>,
    pub components: Components,
}

/// Capacity factor of a generic turbine: cubic between cut-in and rated,
/// flat to cut-out.
pub fn wind_power_curve(speed: f64) -> f64 {
    if !(CUT_IN_SPEED..=CUT_OUT_SPEED).contains(&speed) {
        0.0
    } else if speed >= RATED_SPEED {
        1.0
    } else {
        (speed.powi(3) - CUT_IN_SPEED.powi(3)) / (RATED_SPEED.powi(3) - CUT_IN_SPEED.powi(3))
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Stationary AR(1) with unit variance.
fn ar1(rng: &mut ChaCha8Rng, n: usize, phi: f64) -> Vec<f64> {
    let innov = (1.0 - phi * phi).sqrt();
    let mut z = normal(rng);
    (0..n)
        .map(|_| {
            let out = z;
            z = phi * z + innov * normal(rng);
            out
        })
        .collect()
}

fn hour_of_day(t: DateTime<Utc>) -> f64 {
    t.hour() as f64 + t.minute() as f64 / 60.0
}

/// Intraday load shape around zero: night trough, morning and evening peaks.
fn daily_shape(hour: f64) -> f64 {
    let w = std::f64::consts::TAU / 24.0;
    -0.6 * (w * (hour - 1.0)).cos() + 0.35 * (2.0 * w * (hour - 8.0)).cos()
}

fn seasonal(t: DateTime<Utc>) -> f64 {
    // -1 in mid January, +1 in mid July.
    -(std::f64::consts::TAU * (t.ordinal() as f64 - 15.0) / 365.25).cos()
}

/// Per-variable standard deviation of the forecast error at unit noise.
const FORECAST_ERROR: [f64; 10] = [1.0, 1.0, 1.5, 1.5, 1.0, 1.0, 0.0, 150_000.0, 150.0, 0.0003];

/// Generates the bundle for `spec`. Identical specs give identical bundles.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<SyntheticBundle> {
    spec.validate()?;
    let n = spec.steps();
    let knots = n.div_ceil(KNOT_STEPS) + 1;
    let knot_time = |j: usize| spec.start + Duration::hours(3 * j as i64);

    // Weather truth at the knots.
    let mut weather_rng = rng_stream(spec.seed, 1);
    let z_wind = ar1(&mut weather_rng, knots, 0.85);
    let z_cloud = ar1(&mut weather_rng, knots, 0.8);
    let z_temp = ar1(&mut weather_rng, knots, 0.9);
    let z_press = ar1(&mut weather_rng, knots, 0.95);
    let mut direction = weather_rng.random_range(0.0..std::f64::consts::TAU);
    let mut truth = Vec::with_capacity(knots);
    for j in 0..knots {
        let t = knot_time(j);
        let speed = spec.mean_wind_speed * (0.55 * z_wind[j] - 0.151).exp();
        direction += 0.3 * normal(&mut weather_rng);
        let clear = (0.6 + 0.4 * z_cloud[j].tanh()).clamp(0.2, 1.0);
        let sun = compute_sun_position(spec.lat, spec.lon, t)?;
        let t2m = 283.15
            + 9.0 * seasonal(t)
            + 4.0 * (std::f64::consts::TAU * (hour_of_day(t) - 9.0) / 24.0).sin()
            + 2.0 * z_temp[j];
        truth.push((
            WeatherRecord {
                valid_time: t,
                u10: 0.7 * speed * direction.cos(),
                v10: 0.7 * speed * direction.sin(),
                u100: speed * direction.cos(),
                v100: speed * direction.sin(),
                t2m,
                d2m: t2m - 3.0 - 2.0 * z_cloud[j].abs(),
                fal: 0.2 - 0.03 * seasonal(t),
                ssrd: sun.clear_sky_radiation * clear * 3600.0,
                sp: 101_325.0 + 900.0 * z_press[j],
                tp: (0.5 - clear).max(0.0) * 0.004,
            },
            clear,
        ));
    }

    // Truth on the 15-minute axis.
    let truth_records: Vec<WeatherRecord> = truth.iter().map(|(r, _)| *r).collect();
    let clear_records: Vec<WeatherRecord> = truth
        .iter()
        .map(|(r, c)| WeatherRecord::from_values(r.valid_time, [*c; 10]))
        .collect();
    let fine = align_weather(&truth_records, spec.start, n)?;
    let clear_fine = align_weather(&clear_records, spec.start, n)?;

    let mut load_rng = rng_stream(spec.seed, 2);
    let load_noise = ar1(&mut load_rng, n, 0.97);
    let mut load = Vec::with_capacity(n);
    let mut pv = Vec::with_capacity(n);
    let mut wind = Vec::with_capacity(n);
    let mut flow = Vec::with_capacity(n);
    for i in 0..n {
        let t = spec.start + step() * i as i32;
        let weekly = match t.weekday() {
            Weekday::Sat | Weekday::Sun => spec.load.weekend_factor,
            _ => 1.0,
        };
        let heating = 1.0 + 0.01 * (288.15 - fine[[i, 4]]).max(0.0);
        let l = spec.load.base_mw * (1.0 + spec.load.daily_amplitude * daily_shape(hour_of_day(t))) * weekly * heating
            + spec.load.noise_sigma * load_noise[i];
        let l = (l * spec.scale_at(Asset::Load, t)).max(0.0);

        let sun = compute_sun_position(spec.lat, spec.lon, t)?;
        let p = spec.pv_capacity
            * spec.scale_at(Asset::Pv, t)
            * (sun.clear_sky_radiation / SOLAR_CONSTANT)
            * clear_fine[[i, 0]];

        let speed = fine[[i, 2]].hypot(fine[[i, 3]]);
        let w = spec.wind_capacity * spec.scale_at(Asset::Wind, t) * wind_power_curve(speed);

        load.push(l);
        pv.push(p);
        wind.push(w);
        flow.push(l - p - w);
    }

    // The forecast the model sees: truth plus error.
    let mut fc_rng = rng_stream(spec.seed, 3);
    let weather = truth_records
        .iter()
        .map(|r| {
            let mut v = r.values();
            for (x, sd) in v.iter_mut().zip(FORECAST_ERROR) {
                *x += spec.weather_noise * sd * normal(&mut fc_rng);
            }
            v[7] = v[7].max(0.0);
            v[9] = v[9].max(0.0);
            WeatherRecord::from_values(r.valid_time, v)
        })
        .collect();

    let clean = PowerSeries::reliable(spec.start, flow.clone());
    let power = inject_status_noise(&clean, spec.unreliable_fraction, spec.seed ^ 0x005E_ED0F_57A7)?;
    Ok(SyntheticBundle {
        spec: spec.clone(),
        power,
        weather,
        components: Components {
            start: spec.start,
            load,
            pv,
            wind,
            flow,
        },
    })
}

/// Flags random runs of 1 to 8 steps as unreliable, covering about
/// `fraction` of the series. Flagged values are either held at the last good
/// reading or spiked.
pub fn inject_status_noise(series: &PowerSeries, fraction: f64, seed: u64) -> Result<PowerSeries> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("unreliable fraction {fraction} outside [0, 1)")));
    }
    if fraction == 0.0 {
        return Ok(series.clone());
    }
    // Runs only start outside runs; this start rate makes the flagged share
    // come out at `fraction` on average (mean run length 4.5).
    let p_start = fraction / (4.5 * (1.0 - fraction));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = series.values().to_vec();
    let mut status = series.status().to_vec();
    let mut i = 0;
    while i < values.len() {
        if rng.random::<f64>() < p_start {
            let len = rng.random_range(1..=8usize).min(values.len() - i);
            let held = rng.random_bool(0.5);
            let anchor = if i > 0 { values[i - 1] } else { values[i] };
            for j in i..i + len {
                values[j] = if held { anchor } else { values[j] * 4.0 + 10.0 };
                status[j] = Status::Unreliable;
            }
            i += len;
        } else {
            i += 1;
        }
    }
    PowerSeries::new(series.start(), values, status)
}

fn day(y: i32, m: u32, d: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(y, m, d, 0, 0, 0).unwrap()
}

/// Date layout shared by the canonical fleet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FleetCalendar {
    pub start: DateTime<Utc>,
    pub train_end: DateTime<Utc>,
    pub val_end: DateTime<Utc>,
    /// Last day on which forecasts are issued (exclusive).
    pub test_end: DateTime<Utc>,
    /// End of the record, leaving room for the last forecasts' truth.
    pub end: DateTime<Utc>,
}

pub fn fleet_calendar() -> FleetCalendar {
    FleetCalendar {
        start: day(2017, 7, 1),
        train_end: day(2018, 1, 1),
        val_end: day(2018, 1, 15),
        test_end: day(2018, 2, 26),
        end: day(2018, 2, 28),
    }
}

/// Seven scenarios: four get a large step change at the start of the test
/// period, three stay stationary.
pub fn canonical_fleet(seed: u64) -> Vec<ScenarioSpec> {
    let cal = fleet_calendar();
    let drift = cal.val_end;
    let base = |id: &str, k: u64, lat: f64, lon: f64, load: LoadProfile, pv: f64, wind: f64| ScenarioSpec {
        id: id.to_string(),
        lat,
        lon,
        start: cal.start,
        end: cal.end,
        load,
        pv_capacity: pv,
        wind_capacity: wind,
        mean_wind_speed: 7.5,
        events: Vec::new(),
        weather_noise: 0.5,
        unreliable_fraction: 0.01,
        seed: seed.wrapping_mul(1_000_003).wrapping_add(k),
    };
    let profile = |base_mw: f64, daily_amplitude: f64, weekend_factor: f64, noise_sigma: f64| LoadProfile {
        base_mw,
        daily_amplitude,
        weekend_factor,
        noise_sigma,
    };
    let event = |asset: Asset, scale: f64| CapacityEvent {
        date: drift,
        asset,
        scale,
    };

    let mut fleet = vec![
        // New wind farm behind a consumption-dominated substation.
        base("T1", 1, 52.3, 9.7, profile(30.0, 0.35, 0.8, 1.5), 6.0, 3.0),
        // Mixed transformer whose wind capacity triples.
        base("T2", 2, 53.1, 8.2, profile(20.0, 0.3, 0.85, 1.2), 15.0, 12.0),
        // Wind-heavy area that gains a large industrial consumer.
        base("T3", 3, 54.2, 10.1, profile(12.0, 0.3, 0.9, 0.8), 4.0, 30.0),
        // PV-heavy area losing most of its load while a wind farm is added.
        base("T4", 4, 48.4, 10.9, profile(25.0, 0.3, 0.85, 1.2), 35.0, 4.0),
        base("T5", 5, 50.9, 6.9, profile(35.0, 0.35, 0.8, 1.5), 5.0, 2.0),
        base("T6", 6, 48.8, 9.2, profile(18.0, 0.3, 0.85, 1.0), 30.0, 3.0),
        base("T7", 7, 52.5, 13.4, profile(22.0, 0.3, 0.85, 1.2), 12.0, 14.0),
    ];
    fleet[0].events = vec![event(Asset::Wind, 25.0)];
    fleet[1].events = vec![event(Asset::Wind, 5.0)];
    fleet[2].events = vec![event(Asset::Load, 4.0)];
    fleet[3].events = vec![event(Asset::Load, 0.4), event(Asset::Wind, 6.0)];
    fleet
}

pub fn write_components_csv(path: impl AsRef<Path>, c: &Components) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("timestamp,load_mw,pv_mw,wind_mw,flow_mw\n");
    for i in 0..c.flow.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            format_timestamp(c.start + step() * i as i32),
            c.load[i],
            c.pv[i],
            c.wind[i],
            c.flow[i]
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes `power.csv`, `weather.csv`, `meta`, `components.csv` and
/// `manifest.toml` into `dir`, creating it if needed.
pub fn write_bundle(dir: impl AsRef<Path>, bundle: &SyntheticBundle) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_power_csv(dir.join("power.csv"), &bundle.power)?;
    write_weather_csv(dir.join("weather.csv"), &bundle.weather)?;
    write_transformer_meta(
        dir.join("meta"),
        &TransformerMeta {
            id: bundle.spec.id.clone(),
            lat: bundle.spec.lat,
            lon: bundle.spec.lon,
        },
    )?;
    write_components_csv(dir.join("components.csv"), &bundle.components)?;
    let manifest = toml::to_string(&bundle.spec).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}
