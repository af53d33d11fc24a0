//! Forecast metrics, rank statistics, significance testing and stratified
//! error analysis.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::preprocess::DecomposedSeries;
use crate::series::{HolidayCalendar, HourlySeries};

/// Point metrics over one forecast window. MAPE is in percent; terms whose
/// actual magnitude falls below `MAPE_EPSILON` kWh are excluded from the
/// MAPE mean and counted in `mape_excluded`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub mape: f64,
    pub mse: f64,
    pub mape_excluded: usize,
}

/// Division-by-zero guard for MAPE, in kWh.
pub const MAPE_EPSILON: f64 = 1e-6;

/// MAE, MAPE (percent) and MSE between actual and predicted vectors.
pub fn metrics(actual: &[f64], predicted: &[f64]) -> Result<Metrics> {
    if actual.is_empty() {
        return Err(Error::parameter("metrics need at least one point".to_string()));
    }
    if actual.len() != predicted.len() {
        return Err(Error::parameter(format!(
            "metrics length mismatch: {} vs {}",
            actual.len(),
            predicted.len()
        )));
    }
    let n = actual.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut pct_sum = 0.0;
    let mut pct_n = 0usize;
    for (&y, &p) in actual.iter().zip(predicted) {
        let e = y - p;
        abs_sum += e.abs();
        sq_sum += e * e;
        if y.abs() >= MAPE_EPSILON {
            pct_sum += (e / y).abs();
            pct_n += 1;
        }
    }
    let mape = if pct_n > 0 {
        100.0 * pct_sum / pct_n as f64
    } else {
        f64::NAN
    };
    Ok(Metrics {
        mae: abs_sum / n,
        mape,
        mse: sq_sum / n,
        mape_excluded: actual.len() - pct_n,
    })
}

/// Per-day metrics plus mean +- std aggregates (population std).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_day: Vec<DayMetrics>,
    pub aggregate: AggregateMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DayMetrics {
    pub date: NaiveDate,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub days: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mape_mean: f64,
    pub mape_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    if n == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_days(per_day: Vec<DayMetrics>) -> MetricsReport {
        let (mae_mean, mae_std) = mean_std(per_day.iter().map(|d| d.metrics.mae));
        let (mape_mean, mape_std) = mean_std(per_day.iter().map(|d| d.metrics.mape));
        let (mse_mean, mse_std) = mean_std(per_day.iter().map(|d| d.metrics.mse));
        MetricsReport {
            aggregate: AggregateMetrics {
                days: per_day.len(),
                mae_mean,
                mae_std,
                mape_mean,
                mape_std,
                mse_mean,
                mse_std,
            },
            per_day,
        }
    }
}

/// Average ranks (1-based) with ties resolved to the mean rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::undefined(
            "correlation undefined for constant input".to_string(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::parameter("spearman: length mismatch".to_string()));
    }
    if x.len() < 2 {
        return Err(Error::parameter("spearman needs n >= 2".to_string()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Two-sided Wilcoxon signed-rank p-value. Zero differences are dropped;
/// the distribution is exact (by enumeration over sign assignments) for
/// n <= 25 and a tie-corrected normal approximation above.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::parameter("wilcoxon: length mismatch".to_string()));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Err(Error::undefined(
            "wilcoxon undefined: all differences are zero".to_string(),
        ));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    if n <= 25 {
        exact_two_sided_p(&ranks, w_plus)
    } else {
        normal_two_sided_p(&ranks, w_plus, n)
    }
}

/// Exact two-sided p by dynamic programming over doubled ranks (average
/// ranks are half-integers, so doubling keeps sums integral).
fn exact_two_sided_p(ranks: &[f64], w_plus: f64) -> Result<f64> {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &d in &doubled {
        reach += d;
        for s in (0..=reach).rev() {
            if s >= d && counts[s - d] > 0.0 {
                counts[s] += counts[s - d];
            }
        }
    }
    let denom: f64 = counts.iter().sum();
    let w2 = (2.0 * w_plus).round() as usize;
    let p_le: f64 = counts[..=w2.min(total)].iter().sum::<f64>() / denom;
    let p_ge: f64 = counts[w2.min(total)..].iter().sum::<f64>() / denom;
    Ok((2.0 * p_le.min(p_ge)).min(1.0))
}

fn normal_two_sided_p(ranks: &[f64], w_plus: f64, n: usize) -> Result<f64> {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    // Tie correction: subtract sum(t^3 - t)/48 over tie groups.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return Err(Error::undefined("wilcoxon variance is zero".to_string()));
    }
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).unwrap();
    Ok((2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0))
}

/// Spearman autocorrelation of a series against its own lagged copies.
/// Pairs with a masked member are dropped.
pub fn lag_correlogram(series: &HourlySeries, lags: &[usize]) -> Result<Vec<(usize, f64)>> {
    let n = series.len();
    let mut out = Vec::with_capacity(lags.len());
    for &lag in lags {
        if lag == 0 || lag >= n {
            return Err(Error::parameter(format!(
                "lag {lag} invalid for series of length {n}"
            )));
        }
        let mut x = Vec::with_capacity(n - lag);
        let mut y = Vec::with_capacity(n - lag);
        for i in lag..n {
            if let (Some(a), Some(b)) = (series.value(i), series.value(i - lag)) {
                x.push(a);
                y.push(b);
            }
        }
        if x.len() < 2 {
            return Err(Error::undefined(format!(
                "lag {lag}: fewer than 2 overlapping observations"
            )));
        }
        out.push((lag, spearman(&x, &y)?));
    }
    Ok(out)
}

/// Spearman correlations between aligned decomposition components of two
/// series: raw (reconstructed), trend, seasonal, residual. Indices masked in
/// either operand are dropped pairwise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentCorrelations {
    pub raw: f64,
    pub trend: f64,
    pub seasonal: f64,
    pub residual: f64,
}

pub fn component_correlations(
    demand: &DecomposedSeries,
    weather: &DecomposedSeries,
) -> Result<ComponentCorrelations> {
    if demand.trend.start() != weather.trend.start()
        || demand.parent_length != weather.parent_length
    {
        return Err(Error::parameter(
            "component correlation requires aligned spans".to_string(),
        ));
    }
    let n = demand.parent_length;
    let collect_pairwise = |da: &HourlySeries, wa: &HourlySeries| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            if let (Some(a), Some(b)) = (da.value(i), wa.value(i)) {
                x.push(a);
                y.push(b);
            }
        }
        (x, y)
    };
    let (rt, rw): (Vec<f64>, Vec<f64>) = {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            if let (Some(a), Some(b)) = (demand.reconstruct(i), weather.reconstruct(i)) {
                x.push(a);
                y.push(b);
            }
        }
        (x, y)
    };
    let (tx, ty) = collect_pairwise(&demand.trend, &weather.trend);
    let (sx, sy) = collect_pairwise(&demand.seasonal, &weather.seasonal);
    let (ex, ey) = collect_pairwise(&demand.residual, &weather.residual);
    Ok(ComponentCorrelations {
        raw: spearman(&rt, &rw)?,
        trend: spearman(&tx, &ty)?,
        seasonal: spearman(&sx, &sy)?,
        residual: spearman(&ex, &ey)?,
    })
}

/// Day classification for stratified error analysis. A day is non-working
/// when it is a weekend or a listed holiday; a day is a dissimilar
/// transition when its type differs from the preceding calendar day's type.
#[derive(Debug, Clone, PartialEq)]
pub struct DayClass {
    pub date: NaiveDate,
    pub non_working: bool,
    pub dissimilar_transition: bool,
    pub holiday_name: Option<String>,
}

pub fn classify_day(date: NaiveDate, calendar: &HolidayCalendar) -> DayClass {
    let day_type = |d: NaiveDate| -> bool {
        let wd = d.weekday().num_days_from_monday();
        wd >= 5 || calendar.contains(d)
    };
    let non_working = day_type(date);
    let prev = date.pred_opt().expect("date has a predecessor");
    DayClass {
        date,
        non_working,
        dissimilar_transition: non_working != day_type(prev),
        holiday_name: calendar.name(date).map(str::to_string),
    }
}

/// Stratified per-group metrics. Within each axis (holiday/non-holiday,
/// similar/dissimilar) the groups partition the supplied days; per-named
/// holiday groups are subsets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub groups: Vec<(String, MetricsReport)>,
}

pub fn stratify_days(
    per_day: &[(NaiveDate, Metrics)],
    calendar: &HolidayCalendar,
) -> StratifiedReport {
    let mut buckets: Vec<(String, Vec<DayMetrics>)> = vec![
        ("holiday".to_string(), Vec::new()),
        ("non-holiday".to_string(), Vec::new()),
        ("similar-transition".to_string(), Vec::new()),
        ("dissimilar-transition".to_string(), Vec::new()),
    ];
    let mut named: std::collections::BTreeMap<String, Vec<DayMetrics>> = Default::default();
    for &(date, m) in per_day {
        let class = classify_day(date, calendar);
        let dm = DayMetrics { date, metrics: m };
        if class.holiday_name.is_some() {
            buckets[0].1.push(dm.clone());
        } else {
            buckets[1].1.push(dm.clone());
        }
        if class.dissimilar_transition {
            buckets[3].1.push(dm.clone());
        } else {
            buckets[2].1.push(dm.clone());
        }
        if let Some(name) = class.holiday_name {
            named.entry(format!("holiday:{name}")).or_default().push(dm);
        }
    }
    let mut groups: Vec<(String, MetricsReport)> = buckets
        .into_iter()
        .map(|(name, days)| (name, MetricsReport::from_days(days)))
        .collect();
    for (name, days) in named {
        groups.push((name, MetricsReport::from_days(days)));
    }
    StratifiedReport { groups }
}
