//! Hourly time series carriers: gap-aware series, per-district demand and
//! the holiday calendar.
//!
//! All timestamps are stored in UTC. Local civil time (day boundaries,
//! day-of-week, holiday dates) is derived through a configured IANA zone so
//! that lag arithmetic stays exact across DST transitions.

use chrono::{DateTime, Datelike, NaiveDate, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Physical unit of a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Unit {
    KilowattHour,
    Celsius,
    Dimensionless,
}

/// A gap-aware hourly value sequence. Index `i` corresponds to
/// `start + i` hours; gaps are represented by the missing mask, never by
/// skipped indices.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    start: DateTime<Utc>,
    unit: Unit,
    values: Vec<f64>,
    missing: Vec<bool>,
}

impl HourlySeries {
    pub fn new(
        start: DateTime<Utc>,
        unit: Unit,
        values: Vec<f64>,
        missing: Vec<bool>,
    ) -> Result<Self> {
        if values.len() != missing.len() {
            return Err(Error::parameter(format!(
                "values ({}) and missing mask ({}) lengths differ",
                values.len(),
                missing.len()
            )));
        }
        if start.minute() != 0 || start.second() != 0 || start.nanosecond() != 0 {
            return Err(Error::parameter(format!(
                "series start {start} is not on an hour boundary"
            )));
        }
        Ok(Self {
            start,
            unit,
            values,
            missing,
        })
    }

    /// A fully observed series (no gaps).
    pub fn from_values(start: DateTime<Utc>, unit: Unit, values: Vec<f64>) -> Result<Self> {
        let missing = vec![false; values.len()];
        Self::new(start, unit, values, missing)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    /// UTC timestamp of index `i`.
    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + chrono::Duration::hours(i as i64)
    }

    /// Index of a UTC timestamp, if it falls inside the series span.
    pub fn index_of(&self, ts: DateTime<Utc>) -> Option<usize> {
        let dh = (ts - self.start).num_hours();
        if dh < 0 || ts != self.start + chrono::Duration::hours(dh) {
            return None;
        }
        let i = dh as usize;
        (i < self.len()).then_some(i)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn missing_mask(&self) -> &[bool] {
        &self.missing
    }

    pub fn is_missing(&self, i: usize) -> bool {
        self.missing[i]
    }

    /// Value at `i`, or `None` when masked.
    pub fn value(&self, i: usize) -> Option<f64> {
        (!self.missing[i]).then(|| self.values[i])
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    pub fn set(&mut self, i: usize, v: f64) {
        self.values[i] = v;
        self.missing[i] = false;
    }

    pub fn mask(&mut self, i: usize) {
        self.missing[i] = true;
    }

    /// Contiguous sub-series of `len` values starting at index `at`.
    pub fn slice(&self, at: usize, len: usize) -> Result<HourlySeries> {
        if at + len > self.len() {
            return Err(Error::parameter(format!(
                "slice {at}..{} out of bounds for series of length {}",
                at + len,
                self.len()
            )));
        }
        HourlySeries::new(
            self.timestamp(at),
            self.unit,
            self.values[at..at + len].to_vec(),
            self.missing[at..at + len].to_vec(),
        )
    }

    /// Values with masked entries filled by linear interpolation between the
    /// nearest observed neighbours (constant extension at the ends).
    pub fn interpolated(&self) -> Result<Vec<f64>> {
        interpolate_masked(&self.values, &self.missing)
    }
}

/// Linear interpolation over masked entries of `values`.
pub(crate) fn interpolate_masked(values: &[f64], missing: &[bool]) -> Result<Vec<f64>> {
    let n = values.len();
    if missing.iter().all(|&m| m) {
        return Err(Error::data("cannot interpolate: every value is missing"));
    }
    let mut out = values.to_vec();
    let mut i = 0;
    while i < n {
        if !missing[i] {
            i += 1;
            continue;
        }
        let run_start = i;
        while i < n && missing[i] {
            i += 1;
        }
        let left = run_start.checked_sub(1);
        let right = (i < n).then_some(i);
        for j in run_start..i {
            out[j] = match (left, right) {
                (Some(l), Some(r)) => {
                    let t = (j - l) as f64 / (r - l) as f64;
                    values[l] + t * (values[r] - values[l])
                }
                (Some(l), None) => values[l],
                (None, Some(r)) => values[r],
                (None, None) => unreachable!(),
            };
        }
    }
    Ok(out)
}

/// Per-meter-averaged district demand with the contributing meter count per
/// hour, so forecasts can be rescaled back to total kWh.
#[derive(Debug, Clone)]
pub struct DistrictDemand {
    pub demand: HourlySeries,
    pub meter_count: Vec<u32>,
}

impl DistrictDemand {
    pub fn new(demand: HourlySeries, meter_count: Vec<u32>) -> Result<Self> {
        if demand.len() != meter_count.len() {
            return Err(Error::parameter(
                "demand and meter_count lengths differ".to_string(),
            ));
        }
        for i in 0..demand.len() {
            if !demand.is_missing(i) && meter_count[i] == 0 {
                return Err(Error::parameter(format!(
                    "unmasked demand at index {i} has meter count 0"
                )));
            }
        }
        Ok(Self {
            demand,
            meter_count,
        })
    }

    /// Total (non-averaged) demand at index `i`, when observed.
    pub fn total(&self, i: usize) -> Option<f64> {
        self.demand
            .value(i)
            .map(|v| v * self.meter_count[i] as f64)
    }
}

/// Report of physically implausible negative first differences encountered
/// while converting cumulative readings to hourly consumption.
#[derive(Debug, Clone, Default)]
pub struct DiffReport {
    pub negative_indices: Vec<usize>,
}

/// Convert cumulative meter readings to hourly consumption via first
/// differences: `out[i] = readings[i+1] - readings[i]`.
///
/// Negative differences (meter resets or rollbacks) are masked as missing
/// and listed in the report; repair is deferred to the preprocessing stage.
pub fn diff_cumulative(readings: &HourlySeries) -> Result<(HourlySeries, DiffReport)> {
    if readings.len() < 2 {
        return Err(Error::parameter(
            "cumulative series needs at least 2 readings".to_string(),
        ));
    }
    let n = readings.len() - 1;
    let mut values = vec![0.0; n];
    let mut missing = vec![false; n];
    let mut report = DiffReport::default();
    for i in 0..n {
        match (readings.value(i), readings.value(i + 1)) {
            (Some(a), Some(b)) => {
                let d = b - a;
                if d < 0.0 {
                    missing[i] = true;
                    values[i] = d;
                    report.negative_indices.push(i);
                } else {
                    values[i] = d;
                }
            }
            _ => missing[i] = true,
        }
    }
    let out = HourlySeries::new(readings.start(), readings.unit(), values, missing)?;
    Ok((out, report))
}

/// Aggregate per-meter hourly consumption into per-meter-averaged district
/// demand. Hours with no observed meter are masked.
pub fn aggregate_district(meters: &[HourlySeries]) -> Result<DistrictDemand> {
    if meters.is_empty() {
        return Err(Error::parameter("no meters to aggregate".to_string()));
    }
    let start = meters.iter().map(|m| m.start()).min().unwrap();
    let end = meters
        .iter()
        .map(|m| m.timestamp(m.len()))
        .max()
        .unwrap();
    let len = (end - start).num_hours() as usize;
    let mut values = vec![0.0; len];
    let mut counts = vec![0u32; len];
    for m in meters {
        let offset = (m.start() - start).num_hours() as usize;
        for i in 0..m.len() {
            if let Some(v) = m.value(i) {
                values[offset + i] += v;
                counts[offset + i] += 1;
            }
        }
    }
    let mut missing = vec![false; len];
    for i in 0..len {
        if counts[i] == 0 {
            missing[i] = true;
        } else {
            values[i] /= counts[i] as f64;
        }
    }
    let demand = HourlySeries::new(start, Unit::KilowattHour, values, missing)?;
    DistrictDemand::new(demand, counts)
}

/// Rescale per-meter-averaged kWh values back to district totals.
pub fn rescale_total(per_meter: &[f64], meter_count: u32) -> Result<Vec<f64>> {
    if meter_count == 0 {
        return Err(Error::parameter("meter count must be >= 1".to_string()));
    }
    Ok(per_meter.iter().map(|v| v * meter_count as f64).collect())
}

/// Holiday calendar: unique dates, each mapped to one name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HolidayCalendar {
    entries: BTreeMap<NaiveDate, String>,
}

impl HolidayCalendar {
    pub fn new(entries: impl IntoIterator<Item = (NaiveDate, String)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (date, name) in entries {
            if map.insert(date, name).is_some() {
                return Err(Error::data(format!("duplicate holiday date {date}")));
            }
        }
        Ok(Self { entries: map })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.entries.contains_key(&date)
    }

    pub fn name(&self, date: NaiveDate) -> Option<&str> {
        self.entries.get(&date).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NaiveDate, &str)> {
        self.entries.iter().map(|(d, n)| (*d, n.as_str()))
    }

    /// Most recent date strictly before `before` carrying the same name.
    pub fn previous_occurrence(&self, name: &str, before: NaiveDate) -> Option<NaiveDate> {
        self.entries
            .range(..before)
            .rev()
            .find(|(_, n)| n.as_str() == name)
            .map(|(d, _)| *d)
    }
}

/// Civil time zone used to derive local dates and day boundaries from the
/// UTC-internal representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Zone(pub Tz);

impl Zone {
    pub fn parse(name: &str) -> Result<Zone> {
        name.parse::<Tz>()
            .map(Zone)
            .map_err(|_| Error::parameter(format!("unknown IANA time zone '{name}'")))
    }

    pub fn utc() -> Zone {
        Zone(chrono_tz::UTC)
    }

    /// Local civil date of a UTC instant.
    pub fn local_date(&self, ts: DateTime<Utc>) -> NaiveDate {
        ts.with_timezone(&self.0).date_naive()
    }

    /// Local day-of-week index, Monday = 0.
    pub fn weekday_index(&self, ts: DateTime<Utc>) -> u32 {
        ts.with_timezone(&self.0)
            .weekday()
            .num_days_from_monday()
    }

    /// UTC instant of local midnight on `date`. On spring-forward days where
    /// midnight does not exist the first valid instant of the day is used;
    /// ambiguous midnights resolve to the earlier offset.
    pub fn civil_midnight(&self, date: NaiveDate) -> Result<DateTime<Utc>> {
        for minutes in [0i64, 60, 120] {
            let naive = date.and_hms_opt(0, 0, 0).unwrap() + chrono::Duration::minutes(minutes);
            match self.0.from_local_datetime(&naive) {
                chrono::LocalResult::Single(dt) => return Ok(dt.with_timezone(&Utc)),
                chrono::LocalResult::Ambiguous(a, _) => return Ok(a.with_timezone(&Utc)),
                chrono::LocalResult::None => continue,
            }
        }
        Err(Error::data(format!("no valid midnight for {date}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn utc(y: i32, m: u32, d: u32, h: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, h, 0, 0).unwrap()
    }

    fn series(values: Vec<f64>) -> HourlySeries {
        HourlySeries::from_values(utc(2019, 1, 1, 0), Unit::KilowattHour, values).unwrap()
    }

    #[test]
    fn rejects_non_hour_start() {
        let start = Utc.with_ymd_and_hms(2019, 1, 1, 0, 30, 0).unwrap();
        assert!(HourlySeries::from_values(start, Unit::KilowattHour, vec![1.0]).is_err());
    }

    #[test]
    fn diff_cumulative_hand_case() {
        let (out, rep) = diff_cumulative(&series(vec![10.0, 12.0, 15.0, 15.0])).unwrap();
        assert_eq!(out.values(), &[2.0, 3.0, 0.0]);
        assert!(out.missing_mask().iter().all(|&m| !m));
        assert!(rep.negative_indices.is_empty());
    }

    #[test]
    fn diff_cumulative_masks_meter_reset() {
        let (out, rep) = diff_cumulative(&series(vec![10.0, 5.0])).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out.is_missing(0));
        assert_eq!(rep.negative_indices, vec![0]);
    }

    #[test]
    fn diff_cumulative_too_short() {
        assert!(diff_cumulative(&series(vec![1.0])).is_err());
    }

    #[test]
    fn diff_matches_pairwise_subtraction_oracle() {
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 33) as f64 / (1u64 << 31) as f64
        };
        let mut cum = vec![0.0];
        for _ in 0..500 {
            cum.push(cum.last().unwrap() + next() * 3.0);
        }
        let (out, rep) = diff_cumulative(&series(cum.clone())).unwrap();
        assert!(rep.negative_indices.is_empty());
        for i in 0..out.len() {
            let expect = cum[i + 1] - cum[i];
            assert!((out.values()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn diff_of_cumsum_is_identity() {
        let vals = vec![3.0, 0.0, 2.5, 1.0, 4.0];
        let mut cum = vec![7.0];
        for v in &vals {
            cum.push(cum.last().unwrap() + v);
        }
        let (out, _) = diff_cumulative(&series(cum)).unwrap();
        for (a, b) in out.values().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_two_meters() {
        let m1 = series(vec![2.0, 4.0]);
        let m2 = series(vec![4.0, 8.0]);
        let agg = aggregate_district(&[m1, m2]).unwrap();
        assert_eq!(agg.demand.values(), &[3.0, 6.0]);
        assert_eq!(agg.meter_count, vec![2, 2]);
    }

    #[test]
    fn aggregate_with_masked_hour() {
        let m1 = HourlySeries::new(
            utc(2019, 1, 1, 0),
            Unit::KilowattHour,
            vec![0.0, 4.0],
            vec![true, false],
        )
        .unwrap();
        let m2 = series(vec![4.0, 8.0]);
        let agg = aggregate_district(&[m1, m2]).unwrap();
        assert_eq!(agg.demand.values(), &[4.0, 6.0]);
        assert_eq!(agg.meter_count, vec![1, 2]);
    }

    #[test]
    fn aggregate_matches_mean_oracle_and_is_permutation_invariant() {
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        let n = 48;
        let meters: Vec<HourlySeries> = (0..100)
            .map(|_| series((0..n).map(|_| next() * 5.0).collect()))
            .collect();
        let agg = aggregate_district(&meters).unwrap();
        for i in 0..n {
            let mean: f64 = meters.iter().map(|m| m.values()[i]).sum::<f64>() / 100.0;
            assert!((agg.demand.values()[i] - mean).abs() < 1e-12);
        }
        let mut reversed = meters.clone();
        reversed.reverse();
        let agg2 = aggregate_district(&reversed).unwrap();
        assert_eq!(agg.demand.values(), agg2.demand.values());
        assert_eq!(agg.meter_count, agg2.meter_count);
    }

    #[test]
    fn rescale_hand_cases() {
        assert_eq!(rescale_total(&[3.0, 6.0], 2).unwrap(), vec![6.0, 12.0]);
        assert_eq!(rescale_total(&[0.0, 0.0], 7).unwrap(), vec![0.0, 0.0]);
        assert!(rescale_total(&[1.0], 0).is_err());
    }

    #[test]
    fn aggregate_rescale_round_trip_recovers_sum() {
        let m1 = series(vec![1.0, 2.0, 3.0]);
        let m2 = series(vec![5.0, 6.0, 7.0]);
        let agg = aggregate_district(&[m1.clone(), m2.clone()]).unwrap();
        let totals = rescale_total(agg.demand.values(), 2).unwrap();
        for i in 0..3 {
            let expect = m1.values()[i] + m2.values()[i];
            assert!((totals[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn calendar_arithmetic_is_dst_safe() {
        // Europe/Copenhagen DST starts 2019-03-31 and ends 2019-10-27.
        let s = HourlySeries::from_values(
            utc(2019, 3, 30, 0),
            Unit::KilowattHour,
            vec![0.0; 96],
        )
        .unwrap();
        for i in 0..72 {
            let dt = s.timestamp(i + 24) - s.timestamp(i);
            assert_eq!(dt.num_hours(), 24);
        }
        let zone = Zone::parse("Europe/Copenhagen").unwrap();
        // Local day length across the spring-forward date is 23 hours.
        let d0 = zone
            .civil_midnight(NaiveDate::from_ymd_opt(2019, 3, 31).unwrap())
            .unwrap();
        let d1 = zone
            .civil_midnight(NaiveDate::from_ymd_opt(2019, 4, 1).unwrap())
            .unwrap();
        assert_eq!((d1 - d0).num_hours(), 23);
    }

    #[test]
    fn holiday_calendar_lookup_and_previous_occurrence() {
        let cal = HolidayCalendar::new([
            (NaiveDate::from_ymd_opt(2018, 12, 25).unwrap(), "Juledag".to_string()),
            (NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(), "Nytårsdag".to_string()),
            (NaiveDate::from_ymd_opt(2019, 12, 25).unwrap(), "Juledag".to_string()),
        ])
        .unwrap();
        assert!(cal.contains(NaiveDate::from_ymd_opt(2019, 12, 25).unwrap()));
        assert_eq!(
            cal.previous_occurrence("Juledag", NaiveDate::from_ymd_opt(2019, 12, 25).unwrap()),
            Some(NaiveDate::from_ymd_opt(2018, 12, 25).unwrap())
        );
        assert_eq!(
            cal.previous_occurrence("Juledag", NaiveDate::from_ymd_opt(2018, 12, 25).unwrap()),
            None
        );
    }

    #[test]
    fn duplicate_holiday_dates_rejected() {
        let res = HolidayCalendar::new([
            (NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(), "A".to_string()),
            (NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(), "B".to_string()),
        ]);
        assert!(res.is_err());
    }

    #[test]
    fn interpolation_fills_gaps_linearly() {
        let s = HourlySeries::new(
            utc(2019, 1, 1, 0),
            Unit::KilowattHour,
            vec![1.0, 0.0, 0.0, 4.0],
            vec![false, true, true, false],
        )
        .unwrap();
        let filled = s.interpolated().unwrap();
        assert_eq!(filled, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
