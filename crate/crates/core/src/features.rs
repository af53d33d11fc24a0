//! Per-sample 24-hour feature windows: demand lags, decomposed channels,
//! holiday encodings, cyclical time encodings and train-set standardization.
//!
//! One sample per civil day, anchored at local midnight: every channel
//! covers a full lagged day strictly before the forecast day, the target
//! covers the forecast day itself.

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::preprocess::DecomposedSeries;
use crate::series::{DistrictDemand, HolidayCalendar, HourlySeries, Zone};

pub const HOURS_PER_DAY: usize = 24;

/// Declarative feature selection, by the config-file names:
/// `c24`, `c168`, `c24.d`, `c168.d`, `t_amb`, `t_amb.d`, ..., `holiday_cat`,
/// `holiday_lag`, `holiday_lag.d`, `time_cyc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    DemandLag { lag_hours: usize, decomposed: bool },
    /// Weekly demand lag with same-name-holiday substitution on holidays.
    HolidayLag { decomposed: bool },
    Weather { feature: String, decomposed: bool },
    HolidayCategorical,
    /// Day-of-week sine/cosine pair, constant over the window.
    Cyclical,
}

impl FeatureSpec {
    pub fn parse(name: &str) -> Result<FeatureSpec> {
        let (base, decomposed) = match name.strip_suffix(".d") {
            Some(b) => (b, true),
            None => (name, false),
        };
        let kind = if let Some(hours) = base.strip_prefix('c').and_then(|h| h.parse::<usize>().ok())
        {
            if hours == 0 || hours % HOURS_PER_DAY != 0 {
                return Err(Error::parameter(format!(
                    "demand lag '{name}' must be a positive multiple of 24 hours"
                )));
            }
            FeatureKind::DemandLag {
                lag_hours: hours,
                decomposed,
            }
        } else if base == "holiday_lag" {
            FeatureKind::HolidayLag { decomposed }
        } else if crate::io::WEATHER_FEATURES.contains(&base) {
            FeatureKind::Weather {
                feature: base.to_string(),
                decomposed,
            }
        } else if base == "holiday_cat" && !decomposed {
            FeatureKind::HolidayCategorical
        } else if base == "time_cyc" && !decomposed {
            FeatureKind::Cyclical
        } else {
            return Err(Error::parameter(format!("unknown feature spec '{name}'")));
        };
        Ok(FeatureSpec {
            name: name.to_string(),
            kind,
        })
    }

    /// Number of channels this spec expands to: decomposed demand -> 4
    /// (raw, trend, seasonal, residual), decomposed weather -> 3 (raw,
    /// trend, residual), cyclical -> 2, others -> 1.
    pub fn channel_count(&self) -> usize {
        match &self.kind {
            FeatureKind::DemandLag { decomposed, .. } | FeatureKind::HolidayLag { decomposed } => {
                if *decomposed {
                    4
                } else {
                    1
                }
            }
            FeatureKind::Weather { decomposed, .. } => {
                if *decomposed {
                    3
                } else {
                    1
                }
            }
            FeatureKind::HolidayCategorical => 1,
            FeatureKind::Cyclical => 2,
        }
    }
}

impl TryFrom<String> for FeatureSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<FeatureSpec> {
        FeatureSpec::parse(&s)
    }
}

impl From<FeatureSpec> for String {
    fn from(f: FeatureSpec) -> String {
        f.name
    }
}

/// One training/evaluation sample: named 24-value channels plus the 24-hour
/// target (kWh per meter) for the forecast day.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub forecast_date: NaiveDate,
    pub channels: Vec<(String, Vec<f64>)>,
    pub target: Vec<f64>,
    pub meter_count: u32,
}

impl SampleWindow {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|(n, _)| n.clone()).collect()
    }
}

/// Prepared inputs for sample construction: repaired demand and weather
/// with their district-level decompositions, the holiday calendar and the
/// civil time zone.
#[derive(Debug, Clone)]
pub struct FeatureData {
    pub demand: DistrictDemand,
    pub demand_decomp: DecomposedSeries,
    pub weather: BTreeMap<String, (HourlySeries, DecomposedSeries)>,
    pub calendar: HolidayCalendar,
    pub zone: Zone,
}

impl FeatureData {
    /// Decomposes the (repaired, fully observed) demand and each weather
    /// series once at district level; lag channels reuse these restricted
    /// to the sample window.
    pub fn prepare(
        demand: DistrictDemand,
        weather: BTreeMap<String, HourlySeries>,
        calendar: HolidayCalendar,
        zone: Zone,
        period: usize,
    ) -> Result<FeatureData> {
        if demand.demand.missing_count() > 0 {
            return Err(Error::parameter(
                "demand has masked values; run outlier repair first".to_string(),
            ));
        }
        let demand_decomp = crate::preprocess::seasonal_decompose(&demand.demand, period)?;
        let mut weather_map = BTreeMap::new();
        for (name, series) in weather {
            let filled = HourlySeries::from_values(
                series.start(),
                series.unit(),
                series.interpolated()?,
            )?;
            let decomp = crate::preprocess::seasonal_decompose(&filled, period)?;
            weather_map.insert(name, (series, decomp));
        }
        Ok(FeatureData {
            demand,
            demand_decomp,
            weather: weather_map,
            calendar,
            zone,
        })
    }
}

/// Sine/cosine pair for a cyclic index.
pub fn cyclical_encode(index: i64, period: usize) -> (f64, f64) {
    let angle = 2.0 * std::f64::consts::PI * index as f64 / period as f64;
    (angle.sin(), angle.cos())
}

/// All-ones vector when `date` is a listed holiday, else all zeros.
pub fn holiday_categorical(date: NaiveDate, calendar: &HolidayCalendar) -> Vec<f64> {
    let v = if calendar.contains(date) { 1.0 } else { 0.0 };
    vec![v; HOURS_PER_DAY]
}

/// 24 consecutive values starting `lag_hours` before `day_start`; `None`
/// when out of range or any value is masked.
pub fn build_lag_channel(
    series: &HourlySeries,
    day_start: DateTime<Utc>,
    lag_hours: usize,
) -> Option<Vec<f64>> {
    let window_start = day_start - chrono::Duration::hours(lag_hours as i64);
    let at = series.index_of(window_start)?;
    if at + HOURS_PER_DAY > series.len() {
        return None;
    }
    let mut out = Vec::with_capacity(HOURS_PER_DAY);
    for i in at..at + HOURS_PER_DAY {
        out.push(series.value(i)?);
    }
    Some(out)
}

/// UTC start of the day a holiday-substituted weekly lag reads from: the
/// most recent prior occurrence of the same holiday when `forecast_date`
/// is a holiday and that day is covered by the data, otherwise the plain
/// lag-168 day.
fn holiday_lag_day_start(
    forecast_date: NaiveDate,
    day_start: DateTime<Utc>,
    data: &FeatureData,
) -> DateTime<Utc> {
    let fallback = day_start - chrono::Duration::hours(168);
    let Some(name) = data.calendar.name(forecast_date) else {
        return fallback;
    };
    let Some(prev_date) = data.calendar.previous_occurrence(name, forecast_date) else {
        return fallback;
    };
    match data.zone.civil_midnight(prev_date) {
        Ok(start) if data.demand.demand.index_of(start).is_some() => start,
        _ => fallback,
    }
}

/// Demand of the previous occurrence of the same holiday (fallback: plain
/// lag-168 channel).
pub fn substitute_holiday_lag(
    forecast_date: NaiveDate,
    day_start: DateTime<Utc>,
    data: &FeatureData,
) -> Option<Vec<f64>> {
    let src = holiday_lag_day_start(forecast_date, day_start, data);
    build_lag_channel(
        &data.demand.demand,
        day_start,
        (day_start - src).num_hours() as usize,
    )
}

/// Push the expanded channels of `spec` for the sample anchored at
/// `day_start`. Returns `false` (sample skipped) when anything the spec
/// needs is unavailable.
fn push_channels(
    spec: &FeatureSpec,
    forecast_date: NaiveDate,
    day_start: DateTime<Utc>,
    data: &FeatureData,
    out: &mut Vec<(String, Vec<f64>)>,
) -> bool {
    let decomposed_demand_window = |lag: usize, base: &str, out: &mut Vec<(String, Vec<f64>)>| {
        let d = &data.demand_decomp;
        let raw = build_lag_channel(&data.demand.demand, day_start, lag);
        let trend = build_lag_channel(&d.trend, day_start, lag);
        let seas = build_lag_channel(&d.seasonal, day_start, lag);
        let resid = build_lag_channel(&d.residual, day_start, lag);
        match (raw, trend, seas, resid) {
            (Some(r), Some(t), Some(s), Some(e)) => {
                out.push((base.to_string(), r));
                out.push((format!("{base}.trend"), t));
                out.push((format!("{base}.seas"), s));
                out.push((format!("{base}.resid"), e));
                true
            }
            _ => false,
        }
    };
    match &spec.kind {
        FeatureKind::DemandLag { lag_hours, decomposed } => {
            if *decomposed {
                decomposed_demand_window(*lag_hours, &spec.name, out)
            } else {
                match build_lag_channel(&data.demand.demand, day_start, *lag_hours) {
                    Some(v) => {
                        out.push((spec.name.clone(), v));
                        true
                    }
                    None => false,
                }
            }
        }
        FeatureKind::HolidayLag { decomposed } => {
            let src = holiday_lag_day_start(forecast_date, day_start, data);
            let lag = (day_start - src).num_hours();
            if lag <= 0 {
                return false;
            }
            let lag = lag as usize;
            if *decomposed {
                decomposed_demand_window(lag, &spec.name, out)
            } else {
                match build_lag_channel(&data.demand.demand, day_start, lag) {
                    Some(v) => {
                        out.push((spec.name.clone(), v));
                        true
                    }
                    None => false,
                }
            }
        }
        FeatureKind::Weather { feature, decomposed } => {
            let Some((series, decomp)) = data.weather.get(feature) else {
                return false;
            };
            let raw = build_lag_channel(series, day_start, HOURS_PER_DAY as usize);
            if *decomposed {
                let trend = build_lag_channel(&decomp.trend, day_start, HOURS_PER_DAY);
                let resid = build_lag_channel(&decomp.residual, day_start, HOURS_PER_DAY);
                match (raw, trend, resid) {
                    (Some(r), Some(t), Some(e)) => {
                        out.push((spec.name.clone(), r));
                        out.push((format!("{}.trend", spec.name), t));
                        out.push((format!("{}.resid", spec.name), e));
                        true
                    }
                    _ => false,
                }
            } else {
                match raw {
                    Some(v) => {
                        out.push((spec.name.clone(), v));
                        true
                    }
                    None => false,
                }
            }
        }
        FeatureKind::HolidayCategorical => {
            out.push((
                spec.name.clone(),
                holiday_categorical(forecast_date, &data.calendar),
            ));
            true
        }
        FeatureKind::Cyclical => {
            let dow = data
                .zone
                .weekday_index(day_start + chrono::Duration::hours(12)) as i64;
            let (s, c) = cyclical_encode(dow, 7);
            out.push((format!("{}.sin", spec.name), vec![s; HOURS_PER_DAY]));
            out.push((format!("{}.cos", spec.name), vec![c; HOURS_PER_DAY]));
            true
        }
    }
}

/// Build one sample per civil day whose every required channel (including
/// the maximum lag) is available, in chronological order.
pub fn build_samples(data: &FeatureData, specs: &[FeatureSpec]) -> Result<Vec<SampleWindow>> {
    if specs.is_empty() {
        return Err(Error::parameter("no feature specs".to_string()));
    }
    let demand = &data.demand.demand;
    let mut samples = Vec::new();
    let first_date = data.zone.local_date(demand.start());
    let last_date = data.zone.local_date(demand.timestamp(demand.len() - 1));
    let mut date = first_date;
    while date <= last_date {
        if let Some(sample) = build_one(data, specs, date) {
            samples.push(sample);
        }
        date = date.succ_opt().expect("date has a successor");
    }
    Ok(samples)
}

fn build_one(data: &FeatureData, specs: &[FeatureSpec], date: NaiveDate) -> Option<SampleWindow> {
    let demand = &data.demand.demand;
    let day_start = data.zone.civil_midnight(date).ok()?;
    let target_at = demand.index_of(day_start)?;
    if target_at + HOURS_PER_DAY > demand.len() {
        return None;
    }
    let mut target = Vec::with_capacity(HOURS_PER_DAY);
    for i in target_at..target_at + HOURS_PER_DAY {
        target.push(demand.value(i)?);
    }
    let mut channels = Vec::new();
    for spec in specs {
        if !push_channels(spec, date, day_start, data, &mut channels) {
            return None;
        }
    }
    debug_assert!(channels.iter().all(|(_, v)| v.len() == HOURS_PER_DAY));
    Some(SampleWindow {
        forecast_date: date,
        channels,
        target,
        meter_count: data.demand.meter_count[target_at],
    })
}

/// Per-channel and target z-score statistics, fitted on training samples
/// only. Zero-variance channels standardize with std 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub channel_names: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
}

impl Scaler {
    pub fn fit(train: &[SampleWindow]) -> Result<Scaler> {
        if train.len() < 2 {
            return Err(Error::parameter(
                "scaler needs >= 2 training samples".to_string(),
            ));
        }
        let names = train[0].channel_names();
        let nc = names.len();
        let mut means = vec![0.0; nc];
        let mut stds = vec![0.0; nc];
        let count = (train.len() * HOURS_PER_DAY) as f64;
        for s in train {
            if s.channel_names() != names {
                return Err(Error::contract(
                    "inconsistent channel sets across samples".to_string(),
                ));
            }
            for (ci, (_, v)) in s.channels.iter().enumerate() {
                for x in v {
                    means[ci] += x;
                }
            }
        }
        for m in means.iter_mut() {
            *m /= count;
        }
        for s in train {
            for (ci, (_, v)) in s.channels.iter().enumerate() {
                for x in v {
                    let d = x - means[ci];
                    stds[ci] += d * d;
                }
            }
        }
        for sd in stds.iter_mut() {
            *sd = (*sd / count).sqrt();
            if *sd == 0.0 {
                *sd = 1.0;
            }
        }
        let mut tm = 0.0;
        for s in train {
            for x in &s.target {
                tm += x;
            }
        }
        tm /= count;
        let mut tv = 0.0;
        for s in train {
            for x in &s.target {
                tv += (x - tm) * (x - tm);
            }
        }
        let mut ts = (tv / count).sqrt();
        if ts == 0.0 {
            ts = 1.0;
        }
        Ok(Scaler {
            channel_names: names,
            means,
            stds,
            target_mean: tm,
            target_std: ts,
        })
    }

    pub fn apply(&self, sample: &SampleWindow) -> Result<SampleWindow> {
        if sample.channel_names() != self.channel_names {
            return Err(Error::contract(
                "sample channels do not match scaler contract".to_string(),
            ));
        }
        let channels = sample
            .channels
            .iter()
            .enumerate()
            .map(|(ci, (n, v))| {
                (
                    n.clone(),
                    v.iter()
                        .map(|x| (x - self.means[ci]) / self.stds[ci])
                        .collect(),
                )
            })
            .collect();
        let target = sample
            .target
            .iter()
            .map(|x| (x - self.target_mean) / self.target_std)
            .collect();
        Ok(SampleWindow {
            forecast_date: sample.forecast_date,
            channels,
            target,
            meter_count: sample.meter_count,
        })
    }

    pub fn apply_all(&self, samples: &[SampleWindow]) -> Result<Vec<SampleWindow>> {
        samples.iter().map(|s| self.apply(s)).collect()
    }

    /// Map standardized target values back to kWh per meter.
    pub fn invert_target(&self, standardized: &[f64]) -> Vec<f64> {
        standardized
            .iter()
            .map(|x| x * self.target_std + self.target_mean)
            .collect()
    }

    /// Map a standardized channel back to original units.
    pub fn invert_channel(&self, name: &str, standardized: &[f64]) -> Result<Vec<f64>> {
        let ci = self
            .channel_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::contract(format!("unknown channel '{name}'")))?;
        Ok(standardized
            .iter()
            .map(|x| x * self.stds[ci] + self.means[ci])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Unit;
    use chrono::TimeZone;

    fn demand_ramp(days: usize) -> DistrictDemand {
        let n = days * 24;
        let demand = HourlySeries::from_values(
            Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap(),
            Unit::KilowattHour,
            (0..n).map(|t| t as f64).collect(),
        )
        .unwrap();
        let counts = vec![10u32; n];
        DistrictDemand::new(demand, counts).unwrap()
    }

    fn feature_data(days: usize) -> FeatureData {
        FeatureData::prepare(
            demand_ramp(days),
            BTreeMap::new(),
            HolidayCalendar::empty(),
            Zone::utc(),
            24,
        )
        .unwrap()
    }

    fn specs(names: &[&str]) -> Vec<FeatureSpec> {
        names
            .iter()
            .map(|n| FeatureSpec::parse(n).unwrap())
            .collect()
    }

    #[test]
    fn cyclical_encoding_quarter_points() {
        let (s, c) = cyclical_encode(0, 24);
        assert_eq!((s, c), (0.0, 1.0));
        let (s, c) = cyclical_encode(6, 24);
        assert!((s - 1.0).abs() < 1e-15 && c.abs() < 1e-15);
        let (s, c) = cyclical_encode(12, 24);
        assert!(s.abs() < 1e-15 && (c + 1.0).abs() < 1e-15);
    }

    #[test]
    fn holiday_categorical_from_calendar() {
        let cal = HolidayCalendar::new([(
            NaiveDate::from_ymd_opt(2019, 12, 25).unwrap(),
            "Juledag".to_string(),
        )])
        .unwrap();
        assert!(
            holiday_categorical(NaiveDate::from_ymd_opt(2019, 12, 25).unwrap(), &cal)
                .iter()
                .all(|&v| v == 1.0)
        );
        assert!(
            holiday_categorical(NaiveDate::from_ymd_opt(2019, 12, 24).unwrap(), &cal)
                .iter()
                .all(|&v| v == 0.0)
        );
        assert!(holiday_categorical(
            NaiveDate::from_ymd_opt(2019, 12, 25).unwrap(),
            &HolidayCalendar::empty()
        )
        .iter()
        .all(|&v| v == 0.0));
    }

    #[test]
    fn lag_channel_index_arithmetic_on_ramp() {
        let data = feature_data(10);
        let day_start = Utc.with_ymd_and_hms(2019, 1, 9, 0, 0, 0).unwrap();
        let t0 = 8 * 24;
        let lag24 = build_lag_channel(&data.demand.demand, day_start, 24).unwrap();
        let expect: Vec<f64> = (t0 - 24..t0).map(|t| t as f64).collect();
        assert_eq!(lag24, expect);
        let lag168 = build_lag_channel(&data.demand.demand, day_start, 168).unwrap();
        let expect: Vec<f64> = (t0 - 168..t0 - 144).map(|t| t as f64).collect();
        assert_eq!(lag168, expect);
        assert!(build_lag_channel(&data.demand.demand, day_start, 24 * 20).is_none());
    }

    #[test]
    fn sample_counts_for_eight_days() {
        let data = feature_data(8);
        let s24 = build_samples(&data, &specs(&["c24"])).unwrap();
        assert_eq!(s24.len(), 7);
        let s_both = build_samples(&data, &specs(&["c24", "c168"])).unwrap();
        assert_eq!(s_both.len(), 1);
        assert_eq!(
            s_both[0].forecast_date,
            NaiveDate::from_ymd_opt(2019, 1, 8).unwrap()
        );
    }

    #[test]
    fn samples_are_chronological_and_have_no_lookahead() {
        let data = feature_data(12);
        let samples = build_samples(&data, &specs(&["c24", "c168"])).unwrap();
        for pair in samples.windows(2) {
            assert!(pair[0].forecast_date < pair[1].forecast_date);
        }
        for s in &samples {
            let target_start = (s
                .forecast_date
                .and_hms_opt(0, 0, 0)
                .unwrap()
                .and_utc()
                - data.demand.demand.start())
            .num_hours() as f64;
            for (name, values) in &s.channels {
                // on the ramp, value == hour index, so the max value is the
                // latest source timestamp the channel reads
                let max = values.iter().cloned().fold(f64::MIN, f64::max);
                assert!(max < target_start, "channel {name} leaks ahead");
            }
        }
    }

    #[test]
    fn decomposed_channel_expansion_counts() {
        let data = feature_data(30);
        let samples = build_samples(&data, &specs(&["c24.d"])).unwrap();
        let names = samples[0].channel_names();
        assert_eq!(
            names,
            vec!["c24.d", "c24.d.trend", "c24.d.seas", "c24.d.resid"]
        );
        assert_eq!(FeatureSpec::parse("c24.d").unwrap().channel_count(), 4);
        assert_eq!(FeatureSpec::parse("t_amb.d").unwrap().channel_count(), 3);
        assert_eq!(FeatureSpec::parse("time_cyc").unwrap().channel_count(), 2);
        for s in &samples {
            let raw = s.channel("c24.d").unwrap();
            let t = s.channel("c24.d.trend").unwrap();
            let se = s.channel("c24.d.seas").unwrap();
            let r = s.channel("c24.d.resid").unwrap();
            for i in 0..24 {
                assert!((raw[i] - (t[i] + se[i] + r[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weather_channels_follow_lag24_window() {
        let days = 20;
        let mut weather = BTreeMap::new();
        weather.insert(
            "t_amb".to_string(),
            HourlySeries::from_values(
                Utc.with_ymd_and_hms(2019, 1, 1, 0, 0, 0).unwrap(),
                Unit::Celsius,
                (0..days * 24).map(|t| -(t as f64) * 0.01).collect(),
            )
            .unwrap(),
        );
        let data = FeatureData::prepare(
            demand_ramp(days),
            weather,
            HolidayCalendar::empty(),
            Zone::utc(),
            24,
        )
        .unwrap();
        let samples = build_samples(&data, &specs(&["c24", "t_amb", "t_amb.d"])).unwrap();
        let s = &samples[0];
        assert_eq!(
            s.channel_names(),
            vec!["c24", "t_amb", "t_amb.d", "t_amb.d.trend", "t_amb.d.resid"]
        );
        let t0 = (s.forecast_date.and_hms_opt(0, 0, 0).unwrap().and_utc()
            - data.demand.demand.start())
        .num_hours() as usize;
        let t_amb = s.channel("t_amb").unwrap();
        for i in 0..24 {
            assert_eq!(t_amb[i], -((t0 - 24 + i) as f64) * 0.01);
        }
    }

    #[test]
    fn holiday_lag_substitutes_previous_occurrence() {
        // two years of ramp demand, Christmas in both years
        let days = 740;
        let start = Utc.with_ymd_and_hms(2018, 1, 1, 0, 0, 0).unwrap();
        let demand = HourlySeries::from_values(
            start,
            Unit::KilowattHour,
            (0..days * 24).map(|t| t as f64).collect(),
        )
        .unwrap();
        let dd = DistrictDemand::new(demand, vec![1; days * 24]).unwrap();
        let cal = HolidayCalendar::new([
            (
                NaiveDate::from_ymd_opt(2018, 12, 25).unwrap(),
                "Juledag".to_string(),
            ),
            (
                NaiveDate::from_ymd_opt(2019, 12, 25).unwrap(),
                "Juledag".to_string(),
            ),
        ])
        .unwrap();
        let data = FeatureData::prepare(dd, BTreeMap::new(), cal, Zone::utc(), 24).unwrap();

        let xmas_2019 = NaiveDate::from_ymd_opt(2019, 12, 25).unwrap();
        let day_start = Utc.with_ymd_and_hms(2019, 12, 25, 0, 0, 0).unwrap();
        let channel = substitute_holiday_lag(xmas_2019, day_start, &data).unwrap();
        let xmas_2018_start = (Utc.with_ymd_and_hms(2018, 12, 25, 0, 0, 0).unwrap() - start)
            .num_hours() as usize;
        let expect: Vec<f64> = (xmas_2018_start..xmas_2018_start + 24)
            .map(|t| t as f64)
            .collect();
        assert_eq!(channel, expect);

        // non-holiday date: identical to the plain weekly lag
        let ds = Utc.with_ymd_and_hms(2019, 6, 12, 0, 0, 0).unwrap();
        let sub =
            substitute_holiday_lag(NaiveDate::from_ymd_opt(2019, 6, 12).unwrap(), ds, &data)
                .unwrap();
        let plain = build_lag_channel(&data.demand.demand, ds, 168).unwrap();
        assert_eq!(sub, plain);

        // first-year holiday falls back to lag 168
        let ds18 = Utc.with_ymd_and_hms(2018, 12, 25, 0, 0, 0).unwrap();
        let sub18 =
            substitute_holiday_lag(NaiveDate::from_ymd_opt(2018, 12, 25).unwrap(), ds18, &data)
                .unwrap();
        let plain18 = build_lag_channel(&data.demand.demand, ds18, 168).unwrap();
        assert_eq!(sub18, plain18);
    }

    #[test]
    fn scaler_standardizes_train_statistics() {
        let data = feature_data(40);
        let samples = build_samples(&data, &specs(&["c24", "c168"])).unwrap();
        let scaler = Scaler::fit(&samples).unwrap();
        let scaled = scaler.apply_all(&samples).unwrap();
        for ci in 0..2 {
            let mut mean = 0.0;
            let mut count = 0.0;
            for s in &scaled {
                for x in &s.channels[ci].1 {
                    mean += x;
                    count += 1.0;
                }
            }
            mean /= count;
            let mut var = 0.0;
            for s in &scaled {
                for x in &s.channels[ci].1 {
                    var += (x - mean) * (x - mean);
                }
            }
            let std = (var / count).sqrt();
            assert!(mean.abs() < 1e-9, "channel {ci} mean {mean}");
            assert!((std - 1.0).abs() < 1e-9, "channel {ci} std {std}");
        }
        for (orig, sc) in samples.iter().zip(&scaled) {
            let back = scaler.invert_target(&sc.target);
            for (a, b) in back.iter().zip(&orig.target) {
                assert!((a - b).abs() < 1e-9);
            }
            let back_c = scaler
                .invert_channel("c24", sc.channel("c24").unwrap())
                .unwrap();
            for (a, b) in back_c.iter().zip(orig.channel("c24").unwrap()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scaler_zero_variance_channel_maps_to_zeros() {
        let data = feature_data(10);
        let samples = build_samples(&data, &specs(&["c24", "holiday_cat"])).unwrap();
        let scaler = Scaler::fit(&samples).unwrap();
        let scaled = scaler.apply_all(&samples).unwrap();
        for s in &scaled {
            assert!(s
                .channel("holiday_cat")
                .unwrap()
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn spec_parsing_errors() {
        assert!(FeatureSpec::parse("c25").is_err());
        assert!(FeatureSpec::parse("humidity").is_err());
        assert!(FeatureSpec::parse("time_cyc.d").is_err());
        assert!(FeatureSpec::parse("c0").is_err());
    }
}
