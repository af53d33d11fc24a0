//! CSV and flat-file ingestion/emission for the fixed interchange formats:
//! meter readings, pre-aggregated demand, weather features and holiday lists.
//!
//! All emitted files are UTF-8 with LF line endings and a deterministic
//! column order.

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::{DistrictDemand, HolidayCalendar, HourlySeries, Unit};

pub const WEATHER_FEATURES: [&str; 5] = ["t_amb", "t_min", "t_max", "t_feels", "t_dew"];

/// Parse an ISO-8601 timestamp. Naive timestamps are taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(naive.and_utc());
        }
    }
    Err(Error::data(format!("unparseable timestamp '{s}'")))
}

fn format_timestamp(ts: DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Ingestion output plus non-fatal warnings (e.g. ignored extra columns).
#[derive(Debug)]
pub struct Ingested<T> {
    pub data: T,
    pub warnings: Vec<String>,
}

/// Assemble an hourly series from (timestamp, value) pairs; interior gaps in
/// the hourly grid are masked.
fn series_from_pairs(
    mut pairs: Vec<(DateTime<Utc>, f64)>,
    unit: Unit,
    what: &str,
) -> Result<HourlySeries> {
    if pairs.is_empty() {
        return Err(Error::data(format!("{what}: no rows")));
    }
    pairs.sort_by_key(|(ts, _)| *ts);
    let start = pairs[0].0;
    if start.timestamp() % 3600 != 0 {
        return Err(Error::data(format!(
            "{what}: timestamp {start} is not on an hour boundary"
        )));
    }
    let end = pairs.last().unwrap().0;
    let len = ((end - start).num_hours() + 1) as usize;
    let mut values = vec![0.0; len];
    let mut missing = vec![true; len];
    for (ts, v) in pairs {
        let dh = (ts - start).num_hours();
        if start + chrono::Duration::hours(dh) != ts {
            return Err(Error::data(format!(
                "{what}: timestamp {ts} is not on the hourly grid"
            )));
        }
        let i = dh as usize;
        if !missing[i] {
            return Err(Error::data(format!("{what}: duplicate timestamp {ts}")));
        }
        values[i] = v;
        missing[i] = false;
    }
    HourlySeries::new(start, unit, values, missing)
}

/// Read a meter CSV (`timestamp,meter_id,reading_kwh`) into per-meter
/// cumulative series, keyed and ordered by meter id.
pub fn read_meter_csv(path: &Path) -> Result<Ingested<BTreeMap<String, HourlySeries>>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    expect_columns(&headers, &["timestamp", "meter_id", "reading_kwh"], path)?;
    let mut warnings = Vec::new();
    if headers.len() > 3 {
        warnings.push(format!(
            "{}: ignoring {} extra column(s)",
            path.display(),
            headers.len() - 3
        ));
    }
    let mut per_meter: BTreeMap<String, Vec<(DateTime<Utc>, f64)>> = BTreeMap::new();
    for record in rdr.records() {
        let r = record.map_err(csv_err)?;
        let ts = parse_timestamp(&r[0])?;
        let value = parse_number(&r[2], path)?;
        per_meter.entry(r[1].to_string()).or_default().push((ts, value));
    }
    let mut out = BTreeMap::new();
    for (id, pairs) in per_meter {
        let s = series_from_pairs(pairs, Unit::KilowattHour, &format!("meter {id}"))?;
        out.insert(id, s);
    }
    if out.is_empty() {
        return Err(Error::data(format!("{}: no meter rows", path.display())));
    }
    Ok(Ingested { data: out, warnings })
}

/// Read a pre-aggregated demand CSV (`timestamp,demand[,meter_count]`).
/// A missing `meter_count` column defaults to 1 meter per hour.
pub fn read_demand_csv(path: &Path) -> Result<Ingested<DistrictDemand>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    expect_columns(&headers, &["timestamp", "demand"], path)?;
    let has_count = headers.iter().nth(2) == Some("meter_count");
    let mut warnings = Vec::new();
    let expected = if has_count { 3 } else { 2 };
    if headers.len() > expected {
        warnings.push(format!(
            "{}: ignoring {} extra column(s)",
            path.display(),
            headers.len() - expected
        ));
    }
    let mut pairs = Vec::new();
    let mut counts = Vec::new();
    for record in rdr.records() {
        let r = record.map_err(csv_err)?;
        let ts = parse_timestamp(&r[0])?;
        let v = parse_number(&r[1], path)?;
        let c = if has_count {
            r[2].trim()
                .parse::<u32>()
                .map_err(|_| Error::data(format!("{}: bad meter_count '{}'", path.display(), &r[2])))?
        } else {
            1
        };
        pairs.push((ts, v));
        counts.push((ts, c));
    }
    let demand = series_from_pairs(pairs, Unit::KilowattHour, "demand")?;
    let mut count_vec = vec![0u32; demand.len()];
    for (ts, c) in counts {
        let i = demand.index_of(ts).unwrap();
        count_vec[i] = c;
    }
    let data = DistrictDemand::new(demand, count_vec)?;
    Ok(Ingested { data, warnings })
}

/// Read a weather CSV (`timestamp,<feature_name>`); returns the feature name
/// taken from the header together with the series.
pub fn read_weather_csv(path: &Path) -> Result<Ingested<(String, HourlySeries)>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().next() != Some("timestamp") || headers.len() < 2 {
        return Err(Error::data(format!(
            "{}: expected header 'timestamp,<feature_name>'",
            path.display()
        )));
    }
    let name = headers.iter().nth(1).unwrap().to_string();
    if !WEATHER_FEATURES.contains(&name.as_str()) {
        return Err(Error::data(format!(
            "{}: unknown weather feature '{name}' (expected one of {:?})",
            path.display(),
            WEATHER_FEATURES
        )));
    }
    let mut warnings = Vec::new();
    if headers.len() > 2 {
        warnings.push(format!(
            "{}: ignoring {} extra column(s)",
            path.display(),
            headers.len() - 2
        ));
    }
    let mut pairs = Vec::new();
    for record in rdr.records() {
        let r = record.map_err(csv_err)?;
        pairs.push((parse_timestamp(&r[0])?, parse_number(&r[1], path)?));
    }
    let series = series_from_pairs(pairs, Unit::Celsius, &name)?;
    Ok(Ingested {
        data: (name, series),
        warnings,
    })
}

/// Read a holiday file: one `YYYY-MM-DD,name` per line.
pub fn read_holiday_file(path: &Path) -> Result<HolidayCalendar> {
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (date_str, name) = line.split_once(',').ok_or_else(|| {
            Error::data(format!(
                "{}:{}: expected 'YYYY-MM-DD,name'",
                path.display(),
                lineno + 1
            ))
        })?;
        let date = NaiveDate::parse_from_str(date_str.trim(), "%Y-%m-%d").map_err(|_| {
            Error::data(format!(
                "{}:{}: bad date '{}'",
                path.display(),
                lineno + 1,
                date_str
            ))
        })?;
        entries.push((date, name.trim().to_string()));
    }
    HolidayCalendar::new(entries)
}

pub fn write_demand_csv(path: &Path, demand: &DistrictDemand) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "timestamp,demand,meter_count")?;
    for i in 0..demand.demand.len() {
        if let Some(v) = demand.demand.value(i) {
            writeln!(
                f,
                "{},{},{}",
                format_timestamp(demand.demand.timestamp(i)),
                fmt_f64(v),
                demand.meter_count[i]
            )?;
        }
    }
    Ok(())
}

pub fn write_weather_csv(path: &Path, name: &str, series: &HourlySeries) -> Result<()> {
    let mut f = create(path)?;
    writeln!(f, "timestamp,{name}")?;
    for i in 0..series.len() {
        if let Some(v) = series.value(i) {
            writeln!(f, "{},{}", format_timestamp(series.timestamp(i)), fmt_f64(v))?;
        }
    }
    Ok(())
}

pub fn write_holiday_file(path: &Path, calendar: &HolidayCalendar) -> Result<()> {
    let mut f = create(path)?;
    for (date, name) in calendar.iter() {
        writeln!(f, "{date},{name}")?;
    }
    Ok(())
}

/// Shortest decimal representation that round-trips the f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{}` on f64 already produces the shortest round-trip form.
    format!("{v}")
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let f = std::fs::File::open(path)?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(f))
}

fn csv_err(e: csv::Error) -> Error {
    Error::data(e.to_string())
}

fn parse_number(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::data(format!("{}: bad numeric value '{s}'", path.display())))
}

fn expect_columns(headers: &csv::StringRecord, expected: &[&str], path: &Path) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        if headers.iter().nth(i) != Some(*want) {
            return Err(Error::data(format!(
                "{}: expected column {} to be '{}', found '{}'",
                path.display(),
                i,
                want,
                headers.iter().nth(i).unwrap_or("<none>")
            )));
        }
    }
    Ok(())
}
