//! CSV and key-value file formats for measurements, weather and transformer
//! metadata.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};

use super::{axis_offset, PowerSeries, Status, WeatherRecord, WEATHER_VARIABLES};
use crate::error::{Error, Result};

const POWER_HEADER: [&str; 3] = ["timestamp", "value_mw", "status"];

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s.trim())
        .ok()
        .map(|t| t.with_timezone(&Utc))
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn check_header(rdr: &mut csv::Reader<fs::File>, path: &Path, expected: &[&str]) -> Result<()> {
    let header = rdr.headers().map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: 1,
        msg: e.to_string(),
    })?;
    if !header.iter().eq(expected.iter().copied()) {
        return Err(Error::Schema(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(path: &Path, line: usize, name: &str, raw: Option<&str>) -> Result<T> {
    raw.and_then(|s| s.parse().ok()).ok_or_else(|| Error::Parse {
        path: path.to_owned(),
        line,
        msg: format!("invalid {name}: {:?}", raw.unwrap_or("<missing>")),
    })
}

/// Reads `timestamp,value_mw,status`. Missing 15-minute steps are inserted
/// with the last seen value and flagged unreliable.
pub fn load_power_csv(path: impl AsRef<Path>) -> Result<PowerSeries> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    check_header(&mut rdr, path, &POWER_HEADER)?;

    let mut start: Option<DateTime<Utc>> = None;
    let mut last_offset = -1i64;
    let mut values = Vec::new();
    let mut status = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != POWER_HEADER.len() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                msg: format!("expected 3 fields, found {}", record.len()),
            });
        }
        let t = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line,
            msg: format!("invalid timestamp {:?}", &record[0]),
        })?;
        let value: f64 = parse_field(path, line, "value_mw", record.get(1))?;
        let flag: u8 = parse_field(path, line, "status", record.get(2))?;
        let flag = Status::from_flag(flag).ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line,
            msg: format!("status must be 0 or 1, found {flag}"),
        })?;

        let origin = *start.get_or_insert(t);
        let offset = axis_offset(origin, t).ok_or_else(|| {
            Error::Schema(format!(
                "{}:{line}: timestamp {t} is off the 15-minute grid",
                path.display()
            ))
        })?;
        if offset <= last_offset {
            return Err(Error::Schema(format!(
                "{}:{line}: timestamp {t} is duplicate or out of order",
                path.display()
            )));
        }
        let fill = values.last().copied().unwrap_or(value);
        for _ in last_offset + 1..offset {
            values.push(fill);
            status.push(Status::Unreliable);
        }
        values.push(value);
        status.push(flag);
        last_offset = offset;
    }

    let start = start.ok_or_else(|| Error::Data(format!("{} has no rows", path.display())))?;
    PowerSeries::new(start, values, status)
}

pub fn write_power_csv(path: impl AsRef<Path>, series: &PowerSeries) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(series.len() * 32);
    out.push_str("timestamp,value_mw,status\n");
    for (i, (v, s)) in series.values().iter().zip(series.status()).enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            format_timestamp(series.timestamp(i)),
            v,
            s.flag()
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_weather_csv(path: impl AsRef<Path>) -> Result<Vec<WeatherRecord>> {
    let path = path.as_ref();
    let mut rdr = open_reader(path)?;
    let mut header = vec!["valid_time"];
    header.extend(WEATHER_VARIABLES);
    check_header(&mut rdr, path, &header)?;

    let mut records: Vec<WeatherRecord> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line,
                msg: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let t = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line,
            msg: format!("invalid timestamp {:?}", &record[0]),
        })?;
        let mut vals = [0.0; 10];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = parse_field(path, line, WEATHER_VARIABLES[j], record.get(j + 1))?;
        }
        if let Some(prev) = records.last() {
            if t <= prev.valid_time {
                return Err(Error::Schema(format!(
                    "{}:{line}: valid_time {t} is duplicate or out of order",
                    path.display()
                )));
            }
        }
        records.push(WeatherRecord::from_values(t, vals));
    }
    Ok(records)
}

pub fn write_weather_csv(path: impl AsRef<Path>, records: &[WeatherRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("valid_time,");
    out.push_str(&WEATHER_VARIABLES.join(","));
    out.push('\n');
    for r in records {
        out.push_str(&format_timestamp(r.valid_time));
        for v in r.values() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Location of one transformer, stored as `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerMeta {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

pub fn load_transformer_meta(path: impl AsRef<Path>) -> Result<TransformerMeta> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut id, mut lat, mut lon) = (None, None, None);
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_owned(),
            line: n + 1,
            msg: "expected key=value".into(),
        })?;
        let value = value.trim();
        match key.trim() {
            "id" => id = Some(value.to_string()),
            "lat" => lat = Some(parse_field::<f64>(path, n + 1, "lat", Some(value))?),
            "lon" => lon = Some(parse_field::<f64>(path, n + 1, "lon", Some(value))?),
            _ => {}
        }
    }
    match (id, lat, lon) {
        (Some(id), Some(lat), Some(lon)) => Ok(TransformerMeta { id, lat, lon }),
        _ => Err(Error::Schema(format!(
            "{}: metadata needs id, lat and lon",
            path.display()
        ))),
    }
}

pub fn write_transformer_meta(path: impl AsRef<Path>, meta: &TransformerMeta) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "id={}\nlat={}\nlon={}", meta.id, meta.lat, meta.lon).map_err(|e| Error::io(path, e))
}
