//! Desk-scale synthetic district dataset: hourly demand built from a
//! temperature-driven intensity (yearly cycle through the weather), day-type
//! profiles with weekly modulation, holiday dips, Gaussian noise and
//! injected spike outliers with ground truth. Emits files in the standard
//! interchange formats.

use chrono::{Datelike, NaiveDate, TimeZone, Utc};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io;
use crate::preprocess;
use crate::series::{DistrictDemand, HolidayCalendar, HourlySeries, Unit};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthSpec {
    pub start_year: i32,
    pub years: usize,
    pub noise_sigma: f64,
    pub spikes_per_year: usize,
    /// Spike magnitude as a multiple of the local robust residual scale.
    pub spike_multiplier: f64,
    pub meter_count: u32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            start_year: 2016,
            years: 3,
            noise_sigma: 0.02,
            spikes_per_year: 12,
            spike_multiplier: 10.0,
            meter_count: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub demand: DistrictDemand,
    /// Demand before spike injection (ground truth for repair checks).
    pub clean_demand: HourlySeries,
    pub weather: BTreeMap<String, HourlySeries>,
    pub calendar: HolidayCalendar,
    /// Sorted indices of injected spikes.
    pub outlier_indices: Vec<usize>,
}

/// Anonymous Gregorian (Gauss/Meeus) Easter Sunday computation.
pub fn easter_sunday(year: i32) -> NaiveDate {
    let a = year % 19;
    let b = year / 100;
    let c = year % 100;
    let d = b / 4;
    let e = b % 4;
    let f = (b + 8) / 25;
    let g = (b - f + 1) / 3;
    let h = (19 * a + b - d - g + 15) % 30;
    let i = c / 4;
    let k = c % 4;
    let l = (32 + 2 * e + 2 * i - h - k) % 7;
    let m = (a + 11 * h + 22 * l) / 451;
    let month = (h + l - 7 * m + 114) / 31;
    let day = (h + l - 7 * m + 114) % 31 + 1;
    NaiveDate::from_ymd_opt(year, month as u32, day as u32).unwrap()
}

/// Danish public holidays of a year (fixed dates plus Easter-anchored
/// movable feasts).
pub fn danish_holidays(year: i32) -> Vec<(NaiveDate, String)> {
    let easter = easter_sunday(year);
    let mut out = vec![
        (NaiveDate::from_ymd_opt(year, 1, 1).unwrap(), "Nytårsdag"),
        (easter - chrono::Duration::days(3), "Skærtorsdag"),
        (easter - chrono::Duration::days(2), "Langfredag"),
        (easter, "Påskedag"),
        (easter + chrono::Duration::days(1), "Anden påskedag"),
        (easter + chrono::Duration::days(26), "Store bededag"),
        (easter + chrono::Duration::days(39), "Kristi himmelfartsdag"),
        (easter + chrono::Duration::days(49), "Pinsedag"),
        (easter + chrono::Duration::days(50), "Anden pinsedag"),
        (NaiveDate::from_ymd_opt(year, 12, 25).unwrap(), "Juledag"),
        (NaiveDate::from_ymd_opt(year, 12, 26).unwrap(), "Anden juledag"),
    ];
    out.sort_by_key(|(d, _)| *d);
    out.into_iter().map(|(d, n)| (d, n.to_string())).collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gaussian_bump(h: f64, center: f64, width: f64) -> f64 {
    (-(h - center) * (h - center) / width).exp()
}

/// Centred moving average with clamped edges.
fn smooth(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        out[i] = x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
    }
    out
}

/// Generate the synthetic dataset. Identical seeds give identical data.
pub fn synth_generate(seed: u64, spec: &SynthSpec) -> Result<SynthData> {
    if spec.years < 2 {
        return Err(Error::parameter("synthetic dataset needs years >= 2".to_string()));
    }
    if !(spec.noise_sigma > 0.0) {
        return Err(Error::parameter("noise sigma must be positive".to_string()));
    }
    let start_date = NaiveDate::from_ymd_opt(spec.start_year, 1, 1).unwrap();
    let end_date = NaiveDate::from_ymd_opt(spec.start_year + spec.years as i32 - 1, 12, 31).unwrap();
    let days = (end_date - start_date).num_days() as usize + 1;
    let n = days * 24;
    let start = Utc
        .with_ymd_and_hms(spec.start_year, 1, 1, 0, 0, 0)
        .unwrap();

    let mut calendar_entries = Vec::new();
    for y in spec.start_year..=spec.start_year + spec.years as i32 - 1 {
        calendar_entries.extend(danish_holidays(y));
    }
    let calendar = HolidayCalendar::new(calendar_entries)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit_normal = Normal::new(0.0, 1.0).unwrap();

    // Ambient temperature: yearly and daily cycles plus a slow AR(1).
    let mut temp = vec![0.0; n];
    let mut ar = 0.0;
    for (t, cell) in temp.iter_mut().enumerate() {
        let doy = (t / 24) as f64 % 365.25;
        let hod = (t % 24) as f64;
        ar = 0.985 * ar + 0.40 * unit_normal.sample(&mut rng);
        *cell = 8.5 - 8.5 * (2.0 * std::f64::consts::PI * (doy - 15.0) / 365.25).cos()
            + 2.5 * (2.0 * std::f64::consts::PI * (hod - 14.0) / 24.0).sin()
            + ar;
    }

    // Correlated companion weather features.
    let mut t_min = vec![0.0; n];
    let mut t_max = vec![0.0; n];
    let mut t_feels = vec![0.0; n];
    let mut t_dew = vec![0.0; n];
    let (mut a2, mut a3, mut a4, mut a5) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for t in 0..n {
        a2 = 0.97 * a2 + 0.3 * unit_normal.sample(&mut rng);
        a3 = 0.97 * a3 + 0.3 * unit_normal.sample(&mut rng);
        a4 = 0.97 * a4 + 0.3 * unit_normal.sample(&mut rng);
        a5 = 0.97 * a5 + 0.3 * unit_normal.sample(&mut rng);
        t_min[t] = temp[t] - 1.5 - a2.abs();
        t_max[t] = temp[t] + 1.5 + a3.abs();
        t_feels[t] = temp[t] - 1.2 + 0.5 * a4;
        t_dew[t] = temp[t] - 3.0 + 0.8 * a5;
    }

    // Demand: saturating heating intensity times a day-type profile.
    let temp_smooth = smooth(&temp, 6);
    let mut clean = vec![0.0; n];
    for (t, cell) in clean.iter_mut().enumerate() {
        let date = start_date + chrono::Duration::days((t / 24) as i64);
        let hod = (t % 24) as f64;
        let is_holiday = calendar.contains(date);
        let weekend = date.weekday().num_days_from_monday() >= 5;
        let mut intensity = 0.28 + 1.25 * logistic((9.0 - temp_smooth[t]) / 2.6);
        let profile = if weekend || is_holiday {
            1.0 + 0.50 * gaussian_bump(hod, 11.0, 16.0) + 0.28 * gaussian_bump(hod, 20.0, 12.0)
                - 0.25 * gaussian_bump(hod, 4.0, 12.0)
        } else {
            1.0 + 0.50 * gaussian_bump(hod, 7.0, 7.0) + 0.32 * gaussian_bump(hod, 19.0, 14.0)
                - 0.22 * gaussian_bump(hod, 3.0, 9.0)
        };
        if is_holiday {
            intensity *= 0.93;
        }
        *cell = intensity * profile + spec.noise_sigma * unit_normal.sample(&mut rng);
    }

    // Spikes at `spike_multiplier` times the local studentization scale of
    // the clean series' smoothing residual.
    let clean_series = HourlySeries::from_values(start, Unit::KilowattHour, clean.clone())?;
    let smooth_fit = preprocess::savgol_smooth(
        &clean_series,
        preprocess::DEFAULT_SG_WINDOW,
        preprocess::DEFAULT_SG_POLYORDER,
    )?;
    let resid: Vec<f64> = clean
        .iter()
        .zip(smooth_fit.values())
        .map(|(a, b)| a - b)
        .collect();
    let spike_count = spec.spikes_per_year * spec.years;
    let mut indices = Vec::with_capacity(spike_count);
    let margin = 336usize;
    while indices.len() < spike_count {
        let idx = rng.random_range(margin..n - margin);
        if !indices.contains(&idx) {
            indices.push(idx);
        }
    }
    indices.sort_unstable();
    let half = preprocess::DEFAULT_SG_WINDOW / 2;
    let mut spiked = clean.clone();
    for &idx in &indices {
        let lo = idx.saturating_sub(half);
        let hi = (idx + half + 1).min(n);
        let mut window: Vec<f64> = resid[lo..hi].to_vec();
        let med = median(&mut window);
        let mut devs: Vec<f64> = resid[lo..hi].iter().map(|v| (v - med).abs()).collect();
        let scale = 1.4826 * median(&mut devs);
        let sign = if rng.random::<f64>() < 0.8 { 1.0 } else { -1.0 };
        spiked[idx] += sign * spec.spike_multiplier * scale;
    }

    let demand_series = HourlySeries::from_values(start, Unit::KilowattHour, spiked)?;
    let demand = DistrictDemand::new(demand_series, vec![spec.meter_count; n])?;
    let mut weather = BTreeMap::new();
    let mk = |v: Vec<f64>| HourlySeries::from_values(start, Unit::Celsius, v);
    weather.insert("t_amb".to_string(), mk(temp)?);
    weather.insert("t_min".to_string(), mk(t_min)?);
    weather.insert("t_max".to_string(), mk(t_max)?);
    weather.insert("t_feels".to_string(), mk(t_feels)?);
    weather.insert("t_dew".to_string(), mk(t_dew)?);

    Ok(SynthData {
        demand,
        clean_demand: clean_series,
        weather,
        calendar,
        outlier_indices: indices,
    })
}

fn median(buf: &mut [f64]) -> f64 {
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    *m
}

#[derive(Debug, Clone)]
pub struct SynthPaths {
    pub demand_csv: PathBuf,
    pub weather_csvs: Vec<PathBuf>,
    pub holiday_file: PathBuf,
    pub outlier_truth_csv: PathBuf,
}

/// Emit the dataset in the standard interchange formats plus the
/// ground-truth outlier index list.
pub fn write_dataset(dir: &Path, data: &SynthData) -> Result<SynthPaths> {
    std::fs::create_dir_all(dir)?;
    let demand_csv = dir.join("demand.csv");
    io::write_demand_csv(&demand_csv, &data.demand)?;
    let mut weather_csvs = Vec::new();
    for (name, series) in &data.weather {
        let p = dir.join(format!("weather_{name}.csv"));
        io::write_weather_csv(&p, name, series)?;
        weather_csvs.push(p);
    }
    let holiday_file = dir.join("holidays.txt");
    io::write_holiday_file(&holiday_file, &data.calendar)?;
    let outlier_truth_csv = dir.join("outliers_truth.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&outlier_truth_csv)?);
    use std::io::Write;
    writeln!(f, "index,timestamp")?;
    for &i in &data.outlier_indices {
        writeln!(
            f,
            "{},{}",
            i,
            data.demand
                .demand
                .timestamp(i)
                .format("%Y-%m-%dT%H:%M:%SZ")
        )?;
    }
    Ok(SynthPaths {
        demand_csv,
        weather_csvs,
        holiday_file,
        outlier_truth_csv,
    })
}
