//! Outlier detection/repair and additive seasonal decomposition.
//!
//! Demand series are cleaned by smoothing with a Savitzky-Golay filter,
//! studentizing the residuals against a rolling robust scale, flagging
//! points beyond a Bonferroni-corrected Student-t quantile and replacing
//! them with the sum of the trend and seasonal components.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::solve_dense;
use crate::series::{interpolate_masked, HourlySeries, Unit};

pub const DEFAULT_SG_WINDOW: usize = 169;
pub const DEFAULT_SG_POLYORDER: usize = 3;
pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_PERIOD: usize = 24;

/// MAD-to-sigma factor for a normal distribution.
const MAD_SCALE: f64 = 1.4826;

/// Additive decomposition of a series into trend, seasonal and residual
/// components. The trend is masked for the first and last `period/2`
/// indices; `trend + seasonal + residual` reproduces the parent exactly
/// wherever the trend is defined.
#[derive(Debug, Clone)]
pub struct DecomposedSeries {
    pub trend: HourlySeries,
    pub seasonal: HourlySeries,
    pub residual: HourlySeries,
    pub period: usize,
    pub parent_length: usize,
}

impl DecomposedSeries {
    /// Reconstructed parent value at `i` (exact where trend is defined).
    pub fn reconstruct(&self, i: usize) -> Option<f64> {
        match (self.trend.value(i), self.seasonal.value(i), self.residual.value(i)) {
            (Some(t), Some(s), Some(r)) => Some(t + s + r),
            _ => None,
        }
    }
}

/// Outlier flags over one series. `statistics[k]` is the studentized
/// residual of `indices[k]`; always-flagged physically implausible values
/// (negative consumption) carry an infinite statistic.
#[derive(Debug, Clone)]
pub struct OutlierReport {
    pub indices: Vec<usize>,
    pub statistics: Vec<f64>,
    pub threshold: f64,
    pub alpha: f64,
}

impl OutlierReport {
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn len(&self) -> usize {
        self.indices.len()
    }
}

fn check_sg_params(n: usize, window: usize, polyorder: usize) -> Result<()> {
    if window % 2 == 0 {
        return Err(Error::parameter(format!("window {window} must be odd")));
    }
    if window <= polyorder {
        return Err(Error::parameter(format!(
            "window {window} must exceed polyorder {polyorder}"
        )));
    }
    if n < window {
        return Err(Error::parameter(format!(
            "series length {n} shorter than window {window}"
        )));
    }
    Ok(())
}

/// Weights that evaluate the least-squares polynomial of degree `polyorder`
/// over a window of `window` points at (normalized) position `eval`.
/// Positions are scaled to [-1, 1] to keep the Gram matrix well conditioned.
fn sg_weights(window: usize, polyorder: usize, eval: f64) -> Result<Vec<f64>> {
    let half = (window / 2) as f64;
    let m = polyorder + 1;
    // Vandermonde in the normalized coordinate.
    let mut vmat = vec![0.0; window * m];
    for (j, row) in vmat.chunks_mut(m).enumerate() {
        let x = (j as f64 - half) / half;
        let mut p = 1.0;
        for cell in row.iter_mut() {
            *cell = p;
            p *= x;
        }
    }
    // Gram matrix G = V^T V.
    let mut gram = vec![0.0; m * m];
    for j in 0..window {
        for a in 0..m {
            for b in 0..m {
                gram[a * m + b] += vmat[j * m + a] * vmat[j * m + b];
            }
        }
    }
    // Solve G c_k = e_k column by column to get G^{-1}, then
    // w_j = powers(eval) . G^{-1} . V_j.
    let mut ginv_cols = Vec::with_capacity(m);
    for k in 0..m {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        ginv_cols.push(solve_dense(gram.clone(), e)?);
    }
    let mut epow = vec![0.0; m];
    let mut p = 1.0;
    for cell in epow.iter_mut() {
        *cell = p;
        p *= eval;
    }
    let mut weights = vec![0.0; window];
    for (j, w) in weights.iter_mut().enumerate() {
        let mut acc = 0.0;
        for a in 0..m {
            let mut ginv_row_dot = 0.0;
            for b in 0..m {
                ginv_row_dot += ginv_cols[b][a] * vmat[j * m + b];
            }
            acc += epow[a] * ginv_row_dot;
        }
        *w = acc;
    }
    Ok(weights)
}

/// Savitzky-Golay smoothing: each output point is the centre value of the
/// least-squares polynomial fit over the window; the first and last
/// half-window points come from evaluating the polynomial of the nearest
/// full window at their positions. Masked inputs are interpolated first.
pub fn savgol_smooth(
    series: &HourlySeries,
    window: usize,
    polyorder: usize,
) -> Result<HourlySeries> {
    let n = series.len();
    check_sg_params(n, window, polyorder)?;
    let x = series.interpolated()?;
    let half = window / 2;
    let center = sg_weights(window, polyorder, 0.0)?;
    let mut out = vec![0.0; n];
    for i in half..n - half {
        let win = &x[i - half..i + half + 1];
        let mut acc = 0.0;
        for (w, v) in center.iter().zip(win) {
            acc += w * v;
        }
        out[i] = acc;
    }
    let scale = half as f64;
    for i in 0..half {
        let eval = (i as f64 - half as f64) / scale;
        let w = sg_weights(window, polyorder, eval)?;
        let mut acc = 0.0;
        for (wj, v) in w.iter().zip(&x[..window]) {
            acc += wj * v;
        }
        out[i] = acc;
    }
    for i in n - half..n {
        let eval = (i as f64 - (n - 1 - half) as f64) / scale;
        let w = sg_weights(window, polyorder, eval)?;
        let mut acc = 0.0;
        for (wj, v) in w.iter().zip(&x[n - window..]) {
            acc += wj * v;
        }
        out[i] = acc;
    }
    HourlySeries::from_values(series.start(), series.unit(), out)
}

/// Classical additive decomposition with a centred moving-average trend
/// (half-weight endpoints for even periods) and per-phase seasonal means
/// re-centred to zero.
pub fn seasonal_decompose(series: &HourlySeries, period: usize) -> Result<DecomposedSeries> {
    let n = series.len();
    if period < 2 {
        return Err(Error::parameter("period must be >= 2".to_string()));
    }
    if n < 2 * period {
        return Err(Error::parameter(format!(
            "series length {n} < 2 x period {period}"
        )));
    }
    if series.missing_count() > 0 {
        return Err(Error::parameter(
            "series has masked values; repair before decomposing".to_string(),
        ));
    }
    let x = series.values();
    let half = period / 2;
    let mut trend = vec![0.0; n];
    let mut trend_missing = vec![true; n];
    if period % 2 == 0 {
        let inv = 1.0 / period as f64;
        for i in half..n - half {
            let mut acc = 0.5 * x[i - half] + 0.5 * x[i + half];
            for j in i - half + 1..i + half {
                acc += x[j];
            }
            trend[i] = acc * inv;
            trend_missing[i] = false;
        }
    } else {
        let inv = 1.0 / period as f64;
        for i in half..n - half {
            let mut acc = 0.0;
            for j in i - half..=i + half {
                acc += x[j];
            }
            trend[i] = acc * inv;
            trend_missing[i] = false;
        }
    }
    // Per-phase means of the detrended interior.
    let mut phase_sum = vec![0.0; period];
    let mut phase_cnt = vec![0usize; period];
    for i in half..n - half {
        let p = i % period;
        phase_sum[p] += x[i] - trend[i];
        phase_cnt[p] += 1;
    }
    let mut phase_mean = vec![0.0; period];
    for p in 0..period {
        if phase_cnt[p] == 0 {
            return Err(Error::parameter(format!(
                "phase {p} has no interior observations"
            )));
        }
        phase_mean[p] = phase_sum[p] / phase_cnt[p] as f64;
    }
    let grand = phase_mean.iter().sum::<f64>() / period as f64;
    for m in phase_mean.iter_mut() {
        *m -= grand;
    }
    let seasonal: Vec<f64> = (0..n).map(|i| phase_mean[i % period]).collect();
    let mut residual = vec![0.0; n];
    for i in 0..n {
        if !trend_missing[i] {
            residual[i] = x[i] - trend[i] - seasonal[i];
        }
    }
    Ok(DecomposedSeries {
        trend: HourlySeries::new(series.start(), series.unit(), trend, trend_missing.clone())?,
        seasonal: HourlySeries::from_values(series.start(), series.unit(), seasonal)?,
        residual: HourlySeries::new(series.start(), series.unit(), residual, trend_missing)?,
        period,
        parent_length: n,
    })
}

/// Rolling robust scale of `r`: MAD x 1.4826 over a centred window
/// (truncated at the boundaries).
fn rolling_mad_scale(r: &[f64], window: usize) -> Vec<f64> {
    let n = r.len();
    let half = window / 2;
    let mut out = vec![0.0; n];
    let mut buf: Vec<f64> = Vec::with_capacity(window);
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        buf.clear();
        buf.extend_from_slice(&r[lo..hi]);
        let med = median_in_place(&mut buf);
        for v in buf.iter_mut() {
            *v = (*v - med).abs();
        }
        let mad = median_in_place(&mut buf);
        out[i] = MAD_SCALE * mad;
    }
    out
}

fn median_in_place(buf: &mut [f64]) -> f64 {
    let n = buf.len();
    let mid = n / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    let hi = *m;
    if n % 2 == 1 {
        hi
    } else {
        let lo = buf[..mid]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Bonferroni-corrected two-sided Student-t threshold over `n` tests.
/// Degrees of freedom follow the smoothing fit: `window - polyorder - 1`.
pub fn bonferroni_threshold(alpha: f64, n: usize, window: usize, polyorder: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::parameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let df = (window - polyorder - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::numeric(format!("t distribution: {e}")))?;
    let p = 1.0 - alpha / (2.0 * n as f64);
    Ok(t.inverse_cdf(p))
}

/// Flag outliers: smooth, studentize the residual against a rolling robust
/// scale and test against the Bonferroni-corrected t quantile. Negative
/// values of a kWh series are physically implausible and always flagged
/// (recorded with an infinite statistic).
pub fn detect_outliers(
    series: &HourlySeries,
    alpha: f64,
    window: usize,
    polyorder: usize,
) -> Result<OutlierReport> {
    let n = series.len();
    check_sg_params(n, window, polyorder)?;
    let threshold = bonferroni_threshold(alpha, n, window, polyorder)?;
    let smooth = savgol_smooth(series, window, polyorder)?;
    let x = series.interpolated()?;
    let r: Vec<f64> = x.iter().zip(smooth.values()).map(|(a, b)| a - b).collect();
    let scale = rolling_mad_scale(&r, window);
    // Floor guards against rounding noise on exactly-reproduced series
    // (constant or polynomial inputs leave residuals of a few ulps).
    let amplitude = x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-12 * amplitude;
    let mut indices = Vec::new();
    let mut statistics = Vec::new();
    let negative_implausible = series.unit() == Unit::KilowattHour;
    for i in 0..n {
        if negative_implausible && !series.is_missing(i) && series.values()[i] < 0.0 {
            indices.push(i);
            statistics.push(f64::INFINITY);
            continue;
        }
        if series.is_missing(i) {
            continue;
        }
        let s = if scale[i] > floor {
            r[i].abs() / scale[i]
        } else if r[i].abs() <= floor {
            0.0
        } else {
            f64::INFINITY
        };
        if s > threshold {
            indices.push(i);
            statistics.push(s);
        }
    }
    Ok(OutlierReport {
        indices,
        statistics,
        threshold,
        alpha,
    })
}

/// Replace flagged (and masked) points by trend + seasonal of the
/// decomposition computed on the provisionally interpolated series.
/// Unflagged values are passed through bit-identically.
pub fn repair_outliers(
    series: &HourlySeries,
    report: &OutlierReport,
    period: usize,
) -> Result<HourlySeries> {
    let n = series.len();
    let mut to_replace = vec![false; n];
    for &i in &report.indices {
        to_replace[i] = true;
    }
    for i in 0..n {
        if series.is_missing(i) {
            to_replace[i] = true;
        }
    }
    if !to_replace.iter().any(|&b| b) {
        return Ok(series.clone());
    }
    let provisional = interpolate_masked(series.values(), &to_replace)?;
    let prov_series = HourlySeries::from_values(series.start(), series.unit(), provisional)?;
    let dec = seasonal_decompose(&prov_series, period)?;
    // Trend is undefined on the first/last half period; extend with the
    // nearest defined trend value for replacements that fall there.
    let half = period / 2;
    let first_def = half;
    let last_def = n - half - 1;
    let mut out = series.values().to_vec();
    for i in 0..n {
        if to_replace[i] {
            let j = i.clamp(first_def, last_def);
            out[i] = dec.trend.values()[j] + dec.seasonal.values()[i];
        }
    }
    HourlySeries::from_values(series.start(), series.unit(), out)
}
