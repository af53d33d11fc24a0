//! Mother wavelets and the Continuous Wavelet Transform producing
//! per-feature scalograms and the stacked network input tensor.
//!
//! Discretization: the wavelet is evaluated on the hourly sampling grid,
//! `psi((t - tau) / a) / sqrt(a)` with support clipped to [-8, 8] in wavelet
//! time, and the signal is zero-padded at the boundaries. Correctness is
//! defined relative to the direct double-loop evaluation of that sum.

use crate::error::{Error, Result};

/// Half-width of the discretized wavelet support, in wavelet time.
pub const WAVELET_SUPPORT: f64 = 8.0;

/// Reference scale set: integers 1..=24.
pub fn default_scales() -> Vec<f64> {
    (1..=24).map(|a| a as f64).collect()
}

/// Supported real-valued mother wavelet families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WaveletFamily {
    /// Mexican hat (Ricker).
    Mexh,
    /// Real Morlet with centre angular frequency 5.
    Morl,
    /// N-th derivative of a Gaussian, L2-normalized, N in 1..=8.
    Gaus(u8),
}

impl WaveletFamily {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mexh" => Ok(WaveletFamily::Mexh),
            "morl" => Ok(WaveletFamily::Morl),
            _ => {
                if let Some(num) = name.strip_prefix("gaus") {
                    let n: u8 = num
                        .parse()
                        .map_err(|_| Error::parameter(format!("unknown wavelet family '{name}'")))?;
                    if (1..=8).contains(&n) {
                        return Ok(WaveletFamily::Gaus(n));
                    }
                }
                Err(Error::parameter(format!("unknown wavelet family '{name}'")))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            WaveletFamily::Mexh => "mexh".to_string(),
            WaveletFamily::Morl => "morl".to_string(),
            WaveletFamily::Gaus(n) => format!("gaus{n}"),
        }
    }

    /// Centre frequency in cycles per unit of wavelet time, used to map a
    /// scale to its pseudo-frequency `f_c / a`.
    pub fn center_frequency(&self) -> f64 {
        match self {
            // Peak of |FT| of (1 - t^2) e^{-t^2/2} is at omega = sqrt(2).
            WaveletFamily::Mexh => std::f64::consts::SQRT_2 / (2.0 * std::f64::consts::PI),
            WaveletFamily::Morl => 5.0 / (2.0 * std::f64::consts::PI),
            // Peak of |FT| of the N-th Gaussian derivative: omega = sqrt(N).
            WaveletFamily::Gaus(n) => (*n as f64).sqrt() / (2.0 * std::f64::consts::PI),
        }
    }
}

impl TryFrom<String> for WaveletFamily {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        WaveletFamily::parse(&s)
    }
}

impl From<WaveletFamily> for String {
    fn from(f: WaveletFamily) -> String {
        f.name()
    }
}

/// Physicists' Hermite polynomial H_n(t) by recurrence.
fn hermite(n: u8, t: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = 2.0 * t;
    for k in 1..n {
        let h2 = 2.0 * t * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

fn double_factorial(n: u32) -> f64 {
    let mut acc = 1.0;
    let mut k = n;
    while k > 1 {
        acc *= k as f64;
        k -= 2;
    }
    acc
}

/// Evaluate the mother wavelet at wavelet time `t`; zero outside the
/// discretized support [-8, 8].
pub fn wavelet_eval(family: WaveletFamily, t: f64) -> f64 {
    if t.abs() > WAVELET_SUPPORT {
        return 0.0;
    }
    match family {
        WaveletFamily::Mexh => {
            let c = 2.0 / (3.0f64.sqrt() * std::f64::consts::PI.powf(0.25));
            c * (1.0 - t * t) * (-t * t / 2.0).exp()
        }
        WaveletFamily::Morl => (-t * t / 2.0).exp() * (5.0 * t).cos(),
        WaveletFamily::Gaus(n) => {
            // d^n/dt^n e^{-t^2} = (-1)^n H_n(t) e^{-t^2}; L2 norm of that is
            // sqrt((2n-1)!! * sqrt(pi/2)).
            let c = (2.0 / std::f64::consts::PI).powf(0.25)
                / double_factorial(2 * n as u32 - 1).sqrt();
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            c * sign * hermite(n, t) * (-t * t).exp()
        }
    }
}

/// CWT of a signal over the given scales: out[s][tau] =
/// `(1/sqrt(a_s)) * sum_t signal[t] psi((t - tau)/a_s)` with zero padding.
/// Returns a row-major `scales.len() x signal.len()` matrix.
pub fn cwt(signal: &[f64], scales: &[f64], family: WaveletFamily) -> Result<Vec<f64>> {
    let n = signal.len();
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("non-finite value in CWT input".to_string()));
    }
    if scales.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
        return Err(Error::parameter("scales must be positive and finite".to_string()));
    }
    let mut out = vec![0.0; scales.len() * n];
    for (si, &a) in scales.iter().enumerate() {
        let norm = 1.0 / a.sqrt();
        // Taps at integer offsets k = t - tau within the clipped support.
        let reach = (WAVELET_SUPPORT * a).floor() as i64;
        let taps: Vec<f64> = (-reach..=reach)
            .map(|k| norm * wavelet_eval(family, k as f64 / a))
            .collect();
        let row = &mut out[si * n..(si + 1) * n];
        for (tau, cell) in row.iter_mut().enumerate() {
            let t_lo = (tau as i64 - reach).max(0) as usize;
            let t_hi = ((tau as i64 + reach) as usize).min(n - 1);
            let mut acc = 0.0;
            for t in t_lo..=t_hi {
                acc += signal[t] * taps[(t as i64 - tau as i64 + reach) as usize];
            }
            *cell = acc;
        }
    }
    Ok(out)
}

/// Stack of per-channel scalograms: `data[s][t][f]` is the coefficient of
/// channel `f` at scale `scales[s]` and time `t` (row-major, channel last).
#[derive(Debug, Clone)]
pub struct ScalogramTensor {
    pub scales: Vec<f64>,
    pub channel_names: Vec<String>,
    pub time_len: usize,
    pub data: Vec<f64>,
}

impl ScalogramTensor {
    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }
    pub fn num_channels(&self) -> usize {
        self.channel_names.len()
    }
    pub fn at(&self, s: usize, t: usize, f: usize) -> f64 {
        let (tl, nf) = (self.time_len, self.num_channels());
        self.data[(s * tl + t) * nf + f]
    }
}

/// Build the stacked input tensor from standardized feature channels,
/// depth-wise in channel order.
pub fn build_tensor(
    channels: &[(String, Vec<f64>)],
    scales: &[f64],
    family: WaveletFamily,
) -> Result<ScalogramTensor> {
    if channels.is_empty() {
        return Err(Error::parameter("no channels".to_string()));
    }
    let time_len = channels[0].1.len();
    for (name, values) in channels {
        if values.len() != time_len {
            return Err(Error::contract(format!(
                "channel '{name}' length {} != {time_len}",
                values.len()
            )));
        }
    }
    let m = scales.len();
    let nf = channels.len();
    let mut data = vec![0.0; m * time_len * nf];
    for (f, (_, values)) in channels.iter().enumerate() {
        let mat = cwt(values, scales, family)?;
        for s in 0..m {
            for t in 0..time_len {
                data[(s * time_len + t) * nf + f] = mat[s * time_len + t];
            }
        }
    }
    Ok(ScalogramTensor {
        scales: scales.to_vec(),
        channel_names: channels.iter().map(|(n, _)| n.clone()).collect(),
        time_len,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAMILIES: [WaveletFamily; 4] = [
        WaveletFamily::Mexh,
        WaveletFamily::Morl,
        WaveletFamily::Gaus(1),
        WaveletFamily::Gaus(8),
    ];

    #[test]
    fn parse_and_name_round_trip() {
        for name in ["mexh", "morl", "gaus1", "gaus4", "gaus8"] {
            assert_eq!(WaveletFamily::parse(name).unwrap().name(), name);
        }
        assert!(WaveletFamily::parse("gaus9").is_err());
        assert!(WaveletFamily::parse("cmor").is_err());
    }

    #[test]
    fn morl_at_zero_is_one() {
        assert_eq!(wavelet_eval(WaveletFamily::Morl, 0.0), 1.0);
    }

    #[test]
    fn mexh_at_zero_matches_closed_form() {
        let got = wavelet_eval(WaveletFamily::Mexh, 0.0);
        assert!((got - 0.8673250705840776).abs() < 1e-12);
    }

    #[test]
    fn gaus_symmetry() {
        for t in [0.3, 1.1, 2.7, 5.0] {
            // odd N: odd symmetry; even N: even symmetry
            assert!(
                (wavelet_eval(WaveletFamily::Gaus(1), -t)
                    + wavelet_eval(WaveletFamily::Gaus(1), t))
                .abs()
                    < 1e-14
            );
            assert!(
                (wavelet_eval(WaveletFamily::Gaus(2), -t)
                    - wavelet_eval(WaveletFamily::Gaus(2), t))
                .abs()
                    < 1e-14
            );
            assert!(
                (wavelet_eval(WaveletFamily::Gaus(7), -t)
                    + wavelet_eval(WaveletFamily::Gaus(7), t))
                .abs()
                    < 1e-14
            );
            assert!(
                (wavelet_eval(WaveletFamily::Mexh, -t) - wavelet_eval(WaveletFamily::Mexh, t))
                    .abs()
                    < 1e-14
            );
            assert!(
                (wavelet_eval(WaveletFamily::Morl, -t) - wavelet_eval(WaveletFamily::Morl, t))
                    .abs()
                    < 1e-14
            );
        }
    }

    #[test]
    fn wavelets_are_zero_mean_over_support() {
        let dt = 1e-3;
        let steps = (2.0 * WAVELET_SUPPORT / dt) as usize;
        for family in FAMILIES {
            let mut acc = 0.0;
            for k in 0..=steps {
                acc += wavelet_eval(family, -WAVELET_SUPPORT + k as f64 * dt);
            }
            assert!(
                (acc * dt).abs() < 1e-3,
                "{}: integral {}",
                family.name(),
                acc * dt
            );
        }
    }

    #[test]
    fn gaus_is_l2_normalized() {
        let dt = 1e-4;
        let steps = (2.0 * WAVELET_SUPPORT / dt) as usize;
        for n in 1..=8u8 {
            let mut acc = 0.0;
            for k in 0..=steps {
                let v = wavelet_eval(WaveletFamily::Gaus(n), -WAVELET_SUPPORT + k as f64 * dt);
                acc += v * v;
            }
            assert!(
                (acc * dt - 1.0).abs() < 1e-6,
                "gaus{n} norm^2 {}",
                acc * dt
            );
        }
    }

    #[test]
    fn zero_signal_gives_zero_matrix() {
        let out = cwt(&[0.0; 24], &default_scales(), WaveletFamily::Morl).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kronecker_delta_reproduces_sampled_wavelet() {
        let k = 11usize;
        let mut sig = [0.0; 24];
        sig[k] = 1.0;
        for family in FAMILIES {
            let scales = default_scales();
            let out = cwt(&sig, &scales, family).unwrap();
            for (si, &a) in scales.iter().enumerate() {
                for tau in 0..24 {
                    let expect = wavelet_eval(family, (k as f64 - tau as f64) / a) / a.sqrt();
                    let got = out[si * 24 + tau];
                    assert!(
                        (got - expect).abs() < 1e-12,
                        "{} a={a} tau={tau}: {got} vs {expect}",
                        family.name()
                    );
                }
            }
        }
    }

    #[test]
    fn twelve_hour_sinusoid_peaks_at_matching_pseudo_frequency() {
        let sig: Vec<f64> = (0..24)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 12.0).sin())
            .collect();
        let scales = default_scales();
        let out = cwt(&sig, &scales, WaveletFamily::Morl).unwrap();
        let mut best_scale = 0usize;
        let mut best_mean = -1.0;
        for (si, _) in scales.iter().enumerate() {
            let mean: f64 = out[si * 24..(si + 1) * 24]
                .iter()
                .map(|v| v.abs())
                .sum::<f64>()
                / 24.0;
            if mean > best_mean {
                best_mean = mean;
                best_scale = si;
            }
        }
        let fc = WaveletFamily::Morl.center_frequency();
        let target = 1.0 / 12.0;
        let nearest = scales
            .iter()
            .enumerate()
            .min_by(|(_, &a), (_, &b)| {
                (fc / a - target)
                    .abs()
                    .partial_cmp(&(fc / b - target).abs())
                    .unwrap()
            })
            .unwrap()
            .0;
        assert_eq!(best_scale, nearest);
        assert_eq!(scales[best_scale], 10.0);
    }

    #[test]
    fn cwt_is_linear() {
        let mut state = 77u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
        };
        let x: Vec<f64> = (0..24).map(|_| next()).collect();
        let y: Vec<f64> = (0..24).map(|_| next()).collect();
        let (a, b) = (2.5, -1.25);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let scales = default_scales();
        for family in FAMILIES {
            let cx = cwt(&x, &scales, family).unwrap();
            let cy = cwt(&y, &scales, family).unwrap();
            let cc = cwt(&combo, &scales, family).unwrap();
            for i in 0..cc.len() {
                assert!((cc[i] - (a * cx[i] + b * cy[i])).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translation_equivariance_where_support_fits() {
        let mut state = 5u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
        };
        let x: Vec<f64> = (0..72).map(|_| next()).collect();
        let mut shifted = vec![0.0; 72];
        shifted[1..].copy_from_slice(&x[..71]);
        let scales = default_scales();
        let cx = cwt(&x, &scales, WaveletFamily::Morl).unwrap();
        let cs = cwt(&shifted, &scales, WaveletFamily::Morl).unwrap();
        let mut checked = 0;
        for (si, &a) in scales.iter().enumerate() {
            let reach = (WAVELET_SUPPORT * a).ceil() as i64;
            for tau in 24..48i64 {
                // only where the support window stays inside both signals
                if tau - 1 - reach >= 0 && tau + reach <= 71 {
                    let got = cs[si * 72 + tau as usize];
                    let expect = cx[si * 72 + (tau - 1) as usize];
                    assert!((got - expect).abs() < 1e-9, "a={a} tau={tau}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 20, "too few interior checks: {checked}");
    }

    #[test]
    fn cwt_rejects_bad_input() {
        assert!(cwt(&[f64::NAN; 24], &[1.0], WaveletFamily::Morl).is_err());
        assert!(cwt(&[0.0; 24], &[0.0], WaveletFamily::Morl).is_err());
        assert!(cwt(&[0.0; 24], &[-2.0], WaveletFamily::Morl).is_err());
    }

    #[test]
    fn tensor_slices_match_per_channel_cwt() {
        let mut state = 31u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 33) as f64 / (1u64 << 31) as f64 - 0.5
        };
        let c1: Vec<f64> = (0..24).map(|_| next()).collect();
        let c2: Vec<f64> = (0..24).map(|_| next()).collect();
        let channels = vec![
            ("a".to_string(), c1.clone()),
            ("zero".to_string(), vec![0.0; 24]),
            ("b".to_string(), c2.clone()),
        ];
        let scales = default_scales();
        let tensor = build_tensor(&channels, &scales, WaveletFamily::Mexh).unwrap();
        let m1 = cwt(&c1, &scales, WaveletFamily::Mexh).unwrap();
        let m2 = cwt(&c2, &scales, WaveletFamily::Mexh).unwrap();
        for s in 0..24 {
            for t in 0..24 {
                assert_eq!(tensor.at(s, t, 0), m1[s * 24 + t]);
                assert_eq!(tensor.at(s, t, 1), 0.0);
                assert_eq!(tensor.at(s, t, 2), m2[s * 24 + t]);
            }
        }
        // identical channels give identical slices
        let twin = build_tensor(
            &[("x".into(), c1.clone()), ("y".into(), c1.clone())],
            &scales,
            WaveletFamily::Morl,
        )
        .unwrap();
        for s in 0..24 {
            for t in 0..24 {
                assert_eq!(twin.at(s, t, 0), twin.at(s, t, 1));
            }
        }
    }
}
