//! Reference forecasters: seasonal-naive persistence and an ordinary
//! least-squares baseline over the same standardized feature channels the
//! network consumes (not the scalograms).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{SampleWindow, Scaler, HOURS_PER_DAY};
use crate::linalg::{cholesky, cholesky_solve};

/// Ridge applied to the normal equations for conditioning.
pub const RIDGE: f64 = 1e-8;

fn lag_channel_name(sample: &SampleWindow, lag: usize) -> Result<String> {
    let candidates = [format!("c{lag}"), format!("c{lag}.d")];
    for c in &candidates {
        if sample.channel(c).is_some() {
            return Ok(c.clone());
        }
    }
    Err(Error::contract(format!(
        "seasonal naive needs a c{lag} channel; sample has {:?}",
        sample.channel_names()
    )))
}

/// Seasonal-naive forecast: the lag channel verbatim, mapped back to kWh
/// per meter through the channel's own scaler statistics.
pub fn seasonal_naive(sample: &SampleWindow, scaler: &Scaler, lag: usize) -> Result<Vec<f64>> {
    if lag != 24 && lag != 168 {
        return Err(Error::parameter(format!("seasonal naive lag {lag} not in {{24, 168}}")));
    }
    let name = lag_channel_name(sample, lag)?;
    let standardized = sample.channel(&name).expect("checked above");
    scaler.invert_channel(&name, standardized)
}

/// Per-horizon-hour affine weights over the flattened context channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearBaselineParams {
    pub channel_names: Vec<String>,
    /// `weights[h]` has length `channels * 24 + 1`; index 0 is the bias.
    pub weights: Vec<Vec<f64>>,
    /// Set when the normal equations needed a larger ridge than [`RIDGE`].
    pub ridge_escalated: bool,
}

fn regressor_row(sample: &SampleWindow) -> Vec<f64> {
    let mut row = Vec::with_capacity(sample.channels.len() * HOURS_PER_DAY + 1);
    row.push(1.0);
    for (_, v) in &sample.channels {
        row.extend_from_slice(v);
    }
    row
}

/// Ordinary least squares per horizon hour on standardized samples
/// (ridge-stabilized normal equations, shared Gram factorization).
pub fn fit_linear_baseline(train: &[SampleWindow]) -> Result<LinearBaselineParams> {
    if train.len() < 2 {
        return Err(Error::parameter("linear baseline needs >= 2 samples".to_string()));
    }
    let names = train[0].channel_names();
    let d = names.len() * HOURS_PER_DAY + 1;
    let n = train.len();
    let mut xt_x = vec![0.0; d * d];
    let mut xt_y = vec![vec![0.0; d]; HOURS_PER_DAY];
    let mut rows = Vec::with_capacity(n);
    for s in train {
        if s.channel_names() != names {
            return Err(Error::contract("inconsistent channels across samples".to_string()));
        }
        rows.push(regressor_row(s));
    }
    for (s, row) in train.iter().zip(&rows) {
        for a in 0..d {
            let ra = row[a];
            if ra == 0.0 {
                continue;
            }
            for b in a..d {
                xt_x[a * d + b] += ra * row[b];
            }
            for h in 0..HOURS_PER_DAY {
                xt_y[h][a] += ra * s.target[h];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xt_x[a * d + b] = xt_x[b * d + a];
        }
    }
    let mut ridge_escalated = false;
    let mut factor = xt_x.clone();
    for i in 0..d {
        factor[i * d + i] += RIDGE;
    }
    if cholesky(&mut factor, d).is_err() {
        // singular despite the standard ridge: escalate and report
        ridge_escalated = true;
        factor = xt_x;
        for i in 0..d {
            factor[i * d + i] += 1e-2;
        }
        cholesky(&mut factor, d)
            .map_err(|e| Error::numeric(format!("linear baseline normal equations singular: {e}")))?;
    }
    let weights = xt_y
        .into_iter()
        .map(|b| cholesky_solve(&factor, d, &b))
        .collect();
    Ok(LinearBaselineParams {
        channel_names: names,
        weights,
        ridge_escalated,
    })
}

/// Standardized-space prediction of the linear baseline.
pub fn predict_linear_standardized(
    params: &LinearBaselineParams,
    sample: &SampleWindow,
) -> Result<Vec<f64>> {
    if sample.channel_names() != params.channel_names {
        return Err(Error::contract(
            "sample channels do not match linear baseline contract".to_string(),
        ));
    }
    let row = regressor_row(sample);
    Ok(params
        .weights
        .iter()
        .map(|w| w.iter().zip(&row).map(|(a, b)| a * b).sum())
        .collect())
}

/// kWh-per-meter prediction of the linear baseline.
pub fn predict_linear(
    params: &LinearBaselineParams,
    sample: &SampleWindow,
    scaler: &Scaler,
) -> Result<Vec<f64>> {
    Ok(scaler.invert_target(&predict_linear_standardized(params, sample)?))
}
