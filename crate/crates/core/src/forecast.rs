//! End-to-end pipeline: load data, repair outliers, build samples, train
//! the scalogram CNN per an experiment config, evaluate against the in-repo
//! baselines and emit artifacts.

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::baselines;
use crate::cwt::{build_tensor, WaveletFamily};
use crate::error::{Error, Result};
use crate::features::{build_samples, FeatureData, FeatureSpec, SampleWindow, Scaler};
use crate::io;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::layers::{Activation, ConvParams, DenseParams, Layer};
use crate::nn::{self, Model, Tensor3, TrainConfig, TrainHistory};
use crate::preprocess::{self, OutlierReport};
use crate::series::{rescale_total, DistrictDemand, HolidayCalendar, HourlySeries, Zone};
use crate::stats::{metrics, DayMetrics, Metrics, MetricsReport};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DatasetConfig {
    pub demand_csv: PathBuf,
    pub weather_csvs: Vec<PathBuf>,
    pub holiday_file: Option<PathBuf>,
    pub timezone: String,
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
}

/// Wavelet scale set: either an explicit list or an integer range `"a..b"`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum ScalesSpec {
    Range(String),
    List(Vec<f64>),
}

impl Default for ScalesSpec {
    fn default() -> Self {
        ScalesSpec::Range("1..24".to_string())
    }
}

impl ScalesSpec {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            ScalesSpec::List(v) => {
                if v.is_empty() || v.iter().any(|&a| !(a > 0.0)) {
                    return Err(Error::parameter("scales must be positive".to_string()));
                }
                Ok(v.clone())
            }
            ScalesSpec::Range(text) => {
                let (lo, hi) = text
                    .split_once("..")
                    .ok_or_else(|| Error::parameter(format!("bad scales range '{text}'")))?;
                let lo: usize = lo
                    .trim()
                    .parse()
                    .map_err(|_| Error::parameter(format!("bad scales range '{text}'")))?;
                let hi: usize = hi
                    .trim()
                    .parse()
                    .map_err(|_| Error::parameter(format!("bad scales range '{text}'")))?;
                if lo == 0 || hi < lo {
                    return Err(Error::parameter(format!("bad scales range '{text}'")));
                }
                Ok((lo..=hi).map(|a| a as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct WaveletConfig {
    pub family: WaveletFamily,
    pub scales: ScalesSpec,
}

impl Default for WaveletConfig {
    fn default() -> Self {
        WaveletConfig {
            family: WaveletFamily::Morl,
            scales: ScalesSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub conv_filters: Vec<usize>,
    pub dense: Vec<usize>,
    pub dropout: f64,
    pub pooling: bool,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            conv_filters: vec![32, 64, 128],
            dense: vec![1024, 1024],
            dropout: 0.1,
            pooling: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SplitConfig {
    pub test_days: usize,
    pub train_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            test_days: 364,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PreprocessConfig {
    pub sg_window: usize,
    pub sg_polyorder: usize,
    pub alpha: f64,
    pub period: usize,
    pub repair: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            sg_window: preprocess::DEFAULT_SG_WINDOW,
            sg_polyorder: preprocess::DEFAULT_SG_POLYORDER,
            alpha: preprocess::DEFAULT_ALPHA,
            period: preprocess::DEFAULT_PERIOD,
            repair: true,
        }
    }
}

/// Cartesian hyperparameter sweep lists (absent lists pin the base value).
#[derive(Debug, Clone, Serialize, Deserialize, Default, PartialEq)]
#[serde(default)]
pub struct SweepConfig {
    pub wavelet_families: Option<Vec<WaveletFamily>>,
    pub dropouts: Option<Vec<f64>>,
    pub dense: Option<Vec<Vec<usize>>>,
    pub pooling: Option<Vec<bool>>,
}

/// One experiment: dataset, features, wavelet, architecture, training and
/// split settings. An empty JSON override reproduces the reference
/// configuration.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub features: Vec<FeatureSpec>,
    pub wavelet: WaveletConfig,
    pub architecture: ArchitectureConfig,
    pub training: TrainConfig,
    pub split: SplitConfig,
    pub preprocess: PreprocessConfig,
    pub sweep: SweepConfig,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn reference() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig {
                timezone: "UTC".to_string(),
                ..DatasetConfig::default()
            },
            features: ["c24.d", "c168.d", "t_feels.d", "t_amb.d", "t_min.d"]
                .iter()
                .map(|n| FeatureSpec::parse(n).expect("reference feature names parse"))
                .collect(),
            seed: 42,
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::parameter(format!("config: {e}")))?;
        if cfg.features.is_empty() {
            cfg.features = ExperimentConfig::reference().features;
        }
        if cfg.dataset.timezone.is_empty() {
            cfg.dataset.timezone = "UTC".to_string();
        }
        if cfg.seed == 0 {
            cfg.seed = 42;
        }
        Ok(cfg)
    }

    pub fn num_channels(&self) -> usize {
        self.features.iter().map(FeatureSpec::channel_count).sum()
    }
}

/// Assemble the layer stack for the configured architecture: conv filters
/// (3x3, stride 1, same padding, ReLU), optional 2x2 max pool after each
/// conv, flatten, Leaky-ReLU dense hidden layers, dropout after the last
/// hidden layer, then the 24-neuron linear output head.
pub fn build_model(
    arch: &ArchitectureConfig,
    num_channels: usize,
    num_scales: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Model> {
    if num_channels == 0 {
        return Err(Error::parameter("model needs at least one input channel".to_string()));
    }
    let (mut h, mut w) = (num_scales, crate::features::HOURS_PER_DAY);
    let mut layers = Vec::new();
    let mut cin = num_channels;
    for &cout in &arch.conv_filters {
        layers.push(Layer::Conv(ConvParams::kaiming(cin, cout, rng)));
        cin = cout;
        if arch.pooling {
            layers.push(Layer::MaxPool);
            h /= 2;
            w /= 2;
        }
    }
    layers.push(Layer::Flatten);
    let mut din = h * w * cin;
    for &width in &arch.dense {
        layers.push(Layer::Dense(DenseParams::kaiming(
            din,
            width,
            Activation::LeakyRelu,
            rng,
        )));
        din = width;
    }
    if arch.dropout > 0.0 {
        layers.push(Layer::Dropout(arch.dropout));
    }
    layers.push(Layer::Dense(DenseParams::kaiming(
        din,
        crate::features::HOURS_PER_DAY,
        Activation::Identity,
        rng,
    )));
    Model::new((num_scales, crate::features::HOURS_PER_DAY, num_channels), layers)
}

pub struct LoadedDataset {
    pub demand: DistrictDemand,
    pub weather: BTreeMap<String, HourlySeries>,
    pub calendar: HolidayCalendar,
    pub zone: Zone,
    pub warnings: Vec<String>,
}

fn slice_to_range(
    series: &HourlySeries,
    zone: &Zone,
    start: Option<NaiveDate>,
    end: Option<NaiveDate>,
) -> Result<(usize, usize)> {
    let mut lo = 0usize;
    let mut hi = series.len();
    if let Some(d) = start {
        let at = zone.civil_midnight(d)?;
        lo = series
            .index_of(at)
            .ok_or_else(|| Error::data(format!("start date {d} outside data span")))?;
    }
    if let Some(d) = end {
        let at = zone.civil_midnight(d.succ_opt().unwrap())?;
        hi = match series.index_of(at) {
            Some(i) => i,
            None => series.len(),
        };
    }
    if lo >= hi {
        return Err(Error::data("empty date range".to_string()));
    }
    Ok((lo, hi - lo))
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<LoadedDataset> {
    let zone = Zone::parse(if cfg.timezone.is_empty() {
        "UTC"
    } else {
        &cfg.timezone
    })?;
    let mut warnings = Vec::new();
    let demand_in = io::read_demand_csv(&cfg.demand_csv)?;
    warnings.extend(demand_in.warnings);
    let mut demand = demand_in.data;
    let (lo, len) = slice_to_range(&demand.demand, &zone, cfg.start_date, cfg.end_date)?;
    demand = DistrictDemand::new(
        demand.demand.slice(lo, len)?,
        demand.meter_count[lo..lo + len].to_vec(),
    )?;
    let mut weather = BTreeMap::new();
    for path in &cfg.weather_csvs {
        let got = io::read_weather_csv(path)?;
        warnings.extend(got.warnings);
        let (name, series) = got.data;
        let (lo, len) = slice_to_range(&series, &zone, cfg.start_date, cfg.end_date)?;
        weather.insert(name, series.slice(lo, len)?);
    }
    let calendar = match &cfg.holiday_file {
        Some(p) => io::read_holiday_file(p)?,
        None => HolidayCalendar::empty(),
    };
    Ok(LoadedDataset {
        demand,
        weather,
        calendar,
        zone,
        warnings,
    })
}

/// Detect and repair demand outliers per the preprocessing config.
pub fn preprocess_demand(
    demand: &DistrictDemand,
    cfg: &PreprocessConfig,
) -> Result<(DistrictDemand, OutlierReport)> {
    let report = preprocess::detect_outliers(
        &demand.demand,
        cfg.alpha,
        cfg.sg_window,
        cfg.sg_polyorder,
    )?;
    let repaired = preprocess::repair_outliers(&demand.demand, &report, cfg.period)?;
    Ok((
        DistrictDemand::new(repaired, demand.meter_count.clone())?,
        report,
    ))
}

/// Load, repair and decompose everything a feature build needs.
pub fn prepare_feature_data(cfg: &ExperimentConfig) -> Result<(FeatureData, OutlierReport)> {
    let loaded = load_dataset(&cfg.dataset)?;
    let (repaired, report) = if cfg.preprocess.repair {
        preprocess_demand(&loaded.demand, &cfg.preprocess)?
    } else {
        (
            loaded.demand.clone(),
            OutlierReport {
                indices: vec![],
                statistics: vec![],
                threshold: f64::INFINITY,
                alpha: cfg.preprocess.alpha,
            },
        )
    };
    let data = FeatureData::prepare(
        repaired,
        loaded.weather,
        loaded.calendar,
        loaded.zone,
        cfg.preprocess.period,
    )?;
    Ok((data, report))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

pub struct SplitSamples {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Chronological split: the last `test_days` samples are held out; the
/// remainder is divided `train_fraction` / rest in time order.
pub fn split_samples(samples: Vec<SampleWindow>, split: &SplitConfig) -> Result<SplitSamples> {
    let n = samples.len();
    if n <= split.test_days + 3 {
        return Err(Error::parameter(format!(
            "{n} samples cannot support a {}-day test split",
            split.test_days
        )));
    }
    let pre = n - split.test_days;
    let n_train = ((pre as f64) * split.train_fraction).floor() as usize;
    if n_train < 2 || pre - n_train < 1 {
        return Err(Error::parameter("degenerate train/validation split".to_string()));
    }
    let mut samples = samples;
    let test = samples.split_off(pre);
    let val = samples.split_off(n_train);
    Ok(SplitSamples {
        train: samples,
        val,
        test,
    })
}

/// Per-day forecast in original units (district totals).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForecastResult {
    pub date: NaiveDate,
    pub predicted_total: Vec<f64>,
    pub actual_total: Option<Vec<f64>>,
    pub metrics: Option<Metrics>,
}

/// Standardize channels, build the scalogram tensor and run the network;
/// the sample's target vector is never read.
pub fn predict(ckpt: &Checkpoint, sample: &SampleWindow) -> Result<ForecastResult> {
    let names = sample.channel_names();
    if names != ckpt.scaler.channel_names {
        return Err(Error::contract(format!(
            "sample channels {names:?} do not match model contract {:?}",
            ckpt.scaler.channel_names
        )));
    }
    let std_channels: Vec<(String, Vec<f64>)> = sample
        .channels
        .iter()
        .enumerate()
        .map(|(ci, (n, v))| {
            (
                n.clone(),
                v.iter()
                    .map(|x| (x - ckpt.scaler.means[ci]) / ckpt.scaler.stds[ci])
                    .collect(),
            )
        })
        .collect();
    let tensor = build_tensor(&std_channels, &ckpt.wavelet_scales, ckpt.wavelet_family)?;
    let pred_std = ckpt.model.predict_one(&Tensor3::from(&tensor))?;
    let per_meter = ckpt.scaler.invert_target(&pred_std);
    let predicted_total = rescale_total(&per_meter, sample.meter_count)?;
    Ok(ForecastResult {
        date: sample.forecast_date,
        predicted_total,
        actual_total: None,
        metrics: None,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct PhaseTiming {
    pub load_s: f64,
    pub features_s: f64,
    pub cwt_s: f64,
    pub train_s: f64,
    pub eval_s: f64,
    pub total_s: f64,
}

pub struct ExperimentOutput {
    pub cnn: MetricsReport,
    pub naive24: Option<MetricsReport>,
    pub naive168: Option<MetricsReport>,
    pub linear: MetricsReport,
    pub linear_ridge_escalated: bool,
    pub history: TrainHistory,
    pub forecasts: Vec<ForecastResult>,
    pub checkpoint: Checkpoint,
    pub split: SplitSummary,
    pub parameter_count: usize,
    pub timing: PhaseTiming,
    pub outliers_repaired: usize,
}

/// Build the scalogram tensors for a standardized sample set in parallel.
pub fn tensors_for(
    samples: &[SampleWindow],
    scales: &[f64],
    family: WaveletFamily,
) -> Result<Vec<Tensor3>> {
    samples
        .par_iter()
        .map(|s| {
            build_tensor(&s.channels, scales, family).map(|t| Tensor3::from(&t))
        })
        .collect()
}

fn targets_of(samples: &[SampleWindow]) -> Vec<Vec<f64>> {
    samples.iter().map(|s| s.target.clone()).collect()
}

fn per_day_report(
    samples: &[SampleWindow],
    predictions_total: &[Vec<f64>],
) -> Result<(MetricsReport, Vec<ForecastResult>)> {
    let mut days = Vec::with_capacity(samples.len());
    let mut forecasts = Vec::with_capacity(samples.len());
    for (s, pred) in samples.iter().zip(predictions_total) {
        let actual = rescale_total(&s.target, s.meter_count)?;
        let m = metrics(&actual, pred)?;
        days.push(DayMetrics {
            date: s.forecast_date,
            metrics: m,
        });
        forecasts.push(ForecastResult {
            date: s.forecast_date,
            predicted_total: pred.clone(),
            actual_total: Some(actual),
            metrics: Some(m),
        });
    }
    Ok((MetricsReport::from_days(days), forecasts))
}

/// Train and evaluate one experiment on prepared feature data.
pub fn run_on_data(cfg: &ExperimentConfig, data: &FeatureData) -> Result<ExperimentOutput> {
    let t_total = Instant::now();
    let t0 = Instant::now();
    let samples = build_samples(data, &cfg.features)?;
    if samples.is_empty() {
        return Err(Error::data("no eligible samples (check lags vs data span)".to_string()));
    }
    let split = split_samples(samples, &cfg.split)?;
    let scaler = Scaler::fit(&split.train)?;
    let train_std = scaler.apply_all(&split.train)?;
    let val_std = scaler.apply_all(&split.val)?;
    let test_std = scaler.apply_all(&split.test)?;
    let features_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let scales = cfg.wavelet.scales.resolve()?;
    let family = cfg.wavelet.family;
    let train_x = tensors_for(&train_std, &scales, family)?;
    let val_x = tensors_for(&val_std, &scales, family)?;
    let test_x = tensors_for(&test_std, &scales, family)?;
    let cwt_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = build_model(&cfg.architecture, cfg.num_channels(), scales.len(), &mut rng)?;
    let parameter_count = model.param_count();
    let history = nn::train(
        &mut model,
        &train_x,
        &targets_of(&train_std),
        &val_x,
        &targets_of(&val_std),
        &cfg.training,
        &mut rng,
    )?;
    let train_s = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    // Batched test inference in standardized space, then back to totals.
    let mut predictions_total = Vec::with_capacity(test_std.len());
    let out_len = model.output_len();
    for chunk_start in (0..test_x.len()).step_by(32) {
        let chunk_end = (chunk_start + 32).min(test_x.len());
        let b = chunk_end - chunk_start;
        let mut flat = Vec::with_capacity(b * test_x[0].len());
        for t in &test_x[chunk_start..chunk_end] {
            flat.extend_from_slice(&t.data);
        }
        let pred = model.forward_batch(&flat, b)?;
        for i in 0..b {
            let std_pred = &pred[i * out_len..(i + 1) * out_len];
            let per_meter = scaler.invert_target(std_pred);
            predictions_total.push(rescale_total(
                &per_meter,
                split.test[chunk_start + i].meter_count,
            )?);
        }
    }
    let (cnn_report, forecasts) = per_day_report(&split.test, &predictions_total)?;

    let naive_report = |lag: usize| -> Result<Option<MetricsReport>> {
        if baselines::seasonal_naive(&test_std[0], &scaler, lag).is_err() {
            return Ok(None);
        }
        let mut days = Vec::new();
        for (s_std, s_raw) in test_std.iter().zip(&split.test) {
            let per_meter = baselines::seasonal_naive(s_std, &scaler, lag)?;
            let pred = rescale_total(&per_meter, s_raw.meter_count)?;
            let actual = rescale_total(&s_raw.target, s_raw.meter_count)?;
            days.push(DayMetrics {
                date: s_raw.forecast_date,
                metrics: metrics(&actual, &pred)?,
            });
        }
        Ok(Some(MetricsReport::from_days(days)))
    };
    let naive24 = naive_report(24)?;
    let naive168 = naive_report(168)?;

    let linear_params = baselines::fit_linear_baseline(&train_std)?;
    let mut lin_days = Vec::new();
    for (s_std, s_raw) in test_std.iter().zip(&split.test) {
        let per_meter = baselines::predict_linear(&linear_params, s_std, &scaler)?;
        let pred = rescale_total(&per_meter, s_raw.meter_count)?;
        let actual = rescale_total(&s_raw.target, s_raw.meter_count)?;
        lin_days.push(DayMetrics {
            date: s_raw.forecast_date,
            metrics: metrics(&actual, &pred)?,
        });
    }
    let linear = MetricsReport::from_days(lin_days);
    let eval_s = t0.elapsed().as_secs_f64();

    let checkpoint = Checkpoint {
        model,
        seed: cfg.seed,
        wavelet_family: family,
        wavelet_scales: scales,
        scaler,
    };
    Ok(ExperimentOutput {
        cnn: cnn_report,
        naive24,
        naive168,
        linear,
        linear_ridge_escalated: linear_params.ridge_escalated,
        history,
        forecasts,
        checkpoint,
        split: SplitSummary {
            train: split.train.len(),
            val: split.val.len(),
            test: split.test.len(),
        },
        parameter_count,
        timing: PhaseTiming {
            load_s: 0.0,
            features_s,
            cwt_s,
            train_s,
            eval_s,
            total_s: t_total.elapsed().as_secs_f64(),
        },
        outliers_repaired: 0,
    })
}

/// Full experiment from config: load -> repair -> features -> train -> eval.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let t0 = Instant::now();
    let (data, report) = prepare_feature_data(cfg)?;
    let load_s = t0.elapsed().as_secs_f64();
    let mut out = run_on_data(cfg, &data)?;
    out.timing.load_s = load_s;
    out.timing.total_s += load_s;
    out.outliers_repaired = report.len();
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RollingFold {
    pub test_year: i32,
    pub train_years: Vec<i32>,
    pub split: SplitSummary,
    pub cnn: MetricsReport,
    pub naive24: Option<MetricsReport>,
}

/// Rolling-block evaluation: train on years 1..k (80/20 chronological
/// train/val), test on year k+1, for every k. Folds are exact calendar
/// years of the forecast dates.
pub fn rolling_evaluate(cfg: &ExperimentConfig, data: &FeatureData) -> Result<Vec<RollingFold>> {
    let samples = build_samples(data, &cfg.features)?;
    let mut years: Vec<i32> = samples.iter().map(|s| s.forecast_date.year()).collect();
    years.dedup();
    if years.len() < 2 {
        return Err(Error::parameter(format!(
            "rolling evaluation needs >= 2 calendar years, found {years:?}"
        )));
    }
    let scales = cfg.wavelet.scales.resolve()?;
    let family = cfg.wavelet.family;
    let mut folds = Vec::new();
    for k in 1..years.len() {
        let test_year = years[k];
        let train_pool: Vec<SampleWindow> = samples
            .iter()
            .filter(|s| s.forecast_date.year() < test_year)
            .cloned()
            .collect();
        let test: Vec<SampleWindow> = samples
            .iter()
            .filter(|s| s.forecast_date.year() == test_year)
            .cloned()
            .collect();
        let n_train = ((train_pool.len() as f64) * cfg.split.train_fraction).floor() as usize;
        if n_train < 2 || train_pool.len() - n_train < 1 || test.is_empty() {
            return Err(Error::parameter(format!(
                "fold for year {test_year} is degenerate"
            )));
        }
        let mut pool = train_pool;
        let val = pool.split_off(n_train);
        let train = pool;
        let scaler = Scaler::fit(&train)?;
        let train_std = scaler.apply_all(&train)?;
        let val_std = scaler.apply_all(&val)?;
        let test_std = scaler.apply_all(&test)?;
        let train_x = tensors_for(&train_std, &scales, family)?;
        let val_x = tensors_for(&val_std, &scales, family)?;
        let test_x = tensors_for(&test_std, &scales, family)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model =
            build_model(&cfg.architecture, cfg.num_channels(), scales.len(), &mut rng)?;
        nn::train(
            &mut model,
            &train_x,
            &targets_of(&train_std),
            &val_x,
            &targets_of(&val_std),
            &cfg.training,
            &mut rng,
        )?;
        let mut days = Vec::new();
        let out_len = model.output_len();
        for (i, t) in test_x.iter().enumerate() {
            let pred_std = model.forward_batch(&t.data, 1)?;
            let per_meter = scaler.invert_target(&pred_std[..out_len]);
            let pred = rescale_total(&per_meter, test[i].meter_count)?;
            let actual = rescale_total(&test[i].target, test[i].meter_count)?;
            days.push(DayMetrics {
                date: test[i].forecast_date,
                metrics: metrics(&actual, &pred)?,
            });
        }
        let naive = {
            let mut nd = Vec::new();
            let available = baselines::seasonal_naive(&test_std[0], &scaler, 24).is_ok();
            if available {
                for (s_std, s_raw) in test_std.iter().zip(&test) {
                    let per_meter = baselines::seasonal_naive(s_std, &scaler, 24)?;
                    let pred = rescale_total(&per_meter, s_raw.meter_count)?;
                    let actual = rescale_total(&s_raw.target, s_raw.meter_count)?;
                    nd.push(DayMetrics {
                        date: s_raw.forecast_date,
                        metrics: metrics(&actual, &pred)?,
                    });
                }
                Some(MetricsReport::from_days(nd))
            } else {
                None
            }
        };
        folds.push(RollingFold {
            test_year,
            train_years: years[..k].to_vec(),
            split: SplitSummary {
                train: train.len(),
                val: val.len(),
                test: test.len(),
            },
            cnn: MetricsReport::from_days(days),
            naive24: naive,
        });
    }
    Ok(folds)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SweepPoint {
    pub wavelet_family: WaveletFamily,
    pub dropout: f64,
    pub dense: Vec<usize>,
    pub pooling: bool,
}

pub struct SweepRun {
    pub point: SweepPoint,
    pub best_val_loss: f64,
    pub cnn: MetricsReport,
}

pub struct SweepOutput {
    pub runs: Vec<SweepRun>,
    pub best: usize,
}

/// Cartesian sweep over the configured hyperparameter lists; the winner is
/// the run with the lowest best validation loss.
pub fn sweep(cfg: &ExperimentConfig, data: &FeatureData) -> Result<SweepOutput> {
    let families = cfg
        .sweep
        .wavelet_families
        .clone()
        .unwrap_or_else(|| vec![cfg.wavelet.family]);
    let dropouts = cfg
        .sweep
        .dropouts
        .clone()
        .unwrap_or_else(|| vec![cfg.architecture.dropout]);
    let denses = cfg
        .sweep
        .dense
        .clone()
        .unwrap_or_else(|| vec![cfg.architecture.dense.clone()]);
    let poolings = cfg
        .sweep
        .pooling
        .clone()
        .unwrap_or_else(|| vec![cfg.architecture.pooling]);
    let mut runs = Vec::new();
    for family in &families {
        for dropout in &dropouts {
            for dense in &denses {
                for pooling in &poolings {
                    let mut point_cfg = cfg.clone();
                    point_cfg.wavelet.family = *family;
                    point_cfg.architecture.dropout = *dropout;
                    point_cfg.architecture.dense = dense.clone();
                    point_cfg.architecture.pooling = *pooling;
                    let out = run_on_data(&point_cfg, data)?;
                    let best_val_loss = out
                        .history
                        .epochs
                        .get(out.history.best_epoch.saturating_sub(1))
                        .map(|e| e.val_loss)
                        .unwrap_or(f64::INFINITY);
                    runs.push(SweepRun {
                        point: SweepPoint {
                            wavelet_family: *family,
                            dropout: *dropout,
                            dense: dense.clone(),
                            pooling: *pooling,
                        },
                        best_val_loss,
                        cnn: out.cnn,
                    });
                }
            }
        }
    }
    let best = runs
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.best_val_loss.partial_cmp(&b.best_val_loss).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| Error::parameter("empty sweep grid".to_string()))?;
    Ok(SweepOutput { runs, best })
}

#[derive(Serialize)]
struct MetricsJson<'a> {
    split: &'a SplitSummary,
    parameter_count: usize,
    best_epoch: usize,
    epochs_run: usize,
    outliers_repaired: usize,
    cnn: &'a crate::stats::AggregateMetrics,
    naive24: Option<&'a crate::stats::AggregateMetrics>,
    naive168: Option<&'a crate::stats::AggregateMetrics>,
    linear: &'a crate::stats::AggregateMetrics,
    linear_ridge_escalated: bool,
}

/// Emit metrics.json, forecasts.csv, loss_curve.csv, timing.json and the
/// model checkpoint into `dir`. All files are deterministic except
/// timing.json.
pub fn write_outputs(dir: &Path, out: &ExperimentOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let metrics_json = MetricsJson {
        split: &out.split,
        parameter_count: out.parameter_count,
        best_epoch: out.history.best_epoch,
        epochs_run: out.history.epochs.len(),
        outliers_repaired: out.outliers_repaired,
        cnn: &out.cnn.aggregate,
        naive24: out.naive24.as_ref().map(|r| &r.aggregate),
        naive168: out.naive168.as_ref().map(|r| &r.aggregate),
        linear: &out.linear.aggregate,
        linear_ridge_escalated: out.linear_ridge_escalated,
    };
    let text = serde_json::to_string_pretty(&metrics_json)
        .map_err(|e| Error::numeric(format!("metrics serialization: {e}")))?;
    std::fs::write(dir.join("metrics.json"), text + "\n")?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("forecasts.csv"))?);
    writeln!(f, "date,hour,actual,predicted")?;
    for fc in &out.forecasts {
        for h in 0..fc.predicted_total.len() {
            let actual = fc
                .actual_total
                .as_ref()
                .map(|a| io::fmt_f64(a[h]))
                .unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{}",
                fc.date,
                h,
                actual,
                io::fmt_f64(fc.predicted_total[h])
            )?;
        }
    }
    drop(f);

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("loss_curve.csv"))?);
    writeln!(f, "epoch,train_loss,val_loss,lr")?;
    for (i, e) in out.history.epochs.iter().enumerate() {
        writeln!(
            f,
            "{},{},{},{}",
            i + 1,
            io::fmt_f64(e.train_loss),
            io::fmt_f64(e.val_loss),
            io::fmt_f64(e.lr)
        )?;
    }
    drop(f);

    let timing = serde_json::to_string_pretty(&out.timing)
        .map_err(|e| Error::numeric(format!("timing serialization: {e}")))?;
    std::fs::write(dir.join("timing.json"), timing + "\n")?;

    crate::nn::checkpoint::save(&dir.join("model.ckpt"), &out.checkpoint)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameter_count_is_reproduced() {
        // 17 input channels, conv 32/64/128, dense 1024/1024, out 24.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = build_model(&ArchitectureConfig::default(), 17, 24, &mut rng).unwrap();
        assert_eq!(model.param_count(), 76_669_976);
        // flatten width for 24x24x128
        let shapes = model.output_shapes().unwrap();
        assert!(shapes
            .iter()
            .any(|s| matches!(s, crate::nn::model::Shape::Flat(73728))));
    }

    #[test]
    fn single_channel_parameter_count_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = build_model(&ArchitectureConfig::default(), 1, 24, &mut rng).unwrap();
        let expect = (9 * 1 * 32 + 32)
            + (9 * 32 * 64 + 64)
            + (9 * 64 * 128 + 128)
            + (73_728 * 1024 + 1024)
            + (1024 * 1024 + 1024)
            + (1024 * 24 + 24);
        assert_eq!(model.param_count(), expect);
    }

    #[test]
    fn pooling_shrinks_flatten_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = ArchitectureConfig {
            pooling: true,
            ..ArchitectureConfig::default()
        };
        let model = build_model(&arch, 4, 24, &mut rng).unwrap();
        let shapes = model.output_shapes().unwrap();
        assert!(shapes
            .iter()
            .any(|s| matches!(s, crate::nn::model::Shape::Flat(1152))));
    }

    #[test]
    fn scales_spec_parses_ranges_and_lists() {
        assert_eq!(
            ScalesSpec::Range("1..4".into()).resolve().unwrap(),
            vec![1.0, 2.0, 3.0, 4.0]
        );
        assert_eq!(
            ScalesSpec::List(vec![2.0, 8.0]).resolve().unwrap(),
            vec![2.0, 8.0]
        );
        assert!(ScalesSpec::Range("4..1".into()).resolve().is_err());
        assert!(ScalesSpec::List(vec![]).resolve().is_err());
    }

    #[test]
    fn empty_override_config_reproduces_reference_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg.architecture.conv_filters, vec![32, 64, 128]);
        assert_eq!(cfg.architecture.dense, vec![1024, 1024]);
        assert_eq!(cfg.architecture.dropout, 0.1);
        assert!(!cfg.architecture.pooling);
        assert_eq!(cfg.training.lr, 0.001);
        assert_eq!(cfg.training.batch_size, 32);
        assert_eq!(cfg.training.max_epochs, 1000);
        assert_eq!(cfg.training.patience, 50);
        assert_eq!(cfg.training.scheduler_factor, 0.9);
        assert_eq!(cfg.split.test_days, 364);
        assert_eq!(cfg.split.train_fraction, 0.8);
        assert_eq!(cfg.wavelet.family, WaveletFamily::Morl);
        assert_eq!(cfg.wavelet.scales.resolve().unwrap().len(), 24);
        assert_eq!(cfg.num_channels(), 17);
        assert_eq!(cfg.seed, 42);
    }

    #[test]
    fn split_protocol_counts() {
        use chrono::NaiveDate;
        let mk = |i: usize| SampleWindow {
            forecast_date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap()
                + chrono::Duration::days(i as i64),
            channels: vec![("c24".into(), vec![0.0; 24])],
            target: vec![0.0; 24],
            meter_count: 1,
        };
        let samples: Vec<SampleWindow> = (0..1454).map(mk).collect();
        let split = split_samples(
            samples,
            &SplitConfig {
                test_days: 364,
                train_fraction: 0.8,
            },
        )
        .unwrap();
        assert_eq!(split.test.len(), 364);
        assert_eq!(split.train.len(), 872);
        assert_eq!(split.val.len(), 218);
        // chronological and disjoint
        assert!(split.train.last().unwrap().forecast_date < split.val[0].forecast_date);
        assert!(split.val.last().unwrap().forecast_date < split.test[0].forecast_date);
    }
}
