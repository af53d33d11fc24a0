//! Feature-composition comparisons: train one model per feature-set
//! variant, rank by error and test pairwise significance on per-day MAE.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureData, FeatureKind, FeatureSpec};
use crate::forecast::{run_on_data, ExperimentConfig, ExperimentOutput};
use crate::stats::{wilcoxon_signed_rank, MetricsReport};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub features: Vec<FeatureSpec>,
}

pub struct VariantRun {
    pub variant: Variant,
    pub output: ExperimentOutput,
}

pub struct ComparisonReport {
    pub runs: Vec<VariantRun>,
    /// Ranked indices into `runs`, best (lowest test MAE) first.
    pub ranking: Vec<usize>,
    /// Pairwise two-sided Wilcoxon p-values on per-day MAE; `None` when the
    /// test is undefined (all differences zero).
    pub wilcoxon_p: Vec<Vec<Option<f64>>>,
}

/// Train one model per variant on shared prepared data and compare.
pub fn compare_variants(
    base: &ExperimentConfig,
    data: &FeatureData,
    variants: Vec<Variant>,
) -> Result<ComparisonReport> {
    if variants.is_empty() {
        return Err(Error::parameter("no variants to compare".to_string()));
    }
    let mut runs = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut cfg = base.clone();
        cfg.features = variant.features.clone();
        let output = run_on_data(&cfg, data)?;
        runs.push(VariantRun { variant, output });
    }
    let mut ranking: Vec<usize> = (0..runs.len()).collect();
    ranking.sort_by(|&a, &b| {
        runs[a]
            .output
            .cnn
            .aggregate
            .mae_mean
            .partial_cmp(&runs[b].output.cnn.aggregate.mae_mean)
            .unwrap()
    });
    let per_day_mae = |r: &MetricsReport| -> Vec<f64> {
        r.per_day.iter().map(|d| d.metrics.mae).collect()
    };
    let n = runs.len();
    let mut wilcoxon_p = vec![vec![None; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let a = per_day_mae(&runs[i].output.cnn);
            let b = per_day_mae(&runs[j].output.cnn);
            let p = match wilcoxon_signed_rank(&a, &b) {
                Ok(p) => Some(p),
                Err(Error::Undefined(_)) => None,
                Err(e) => return Err(e),
            };
            wilcoxon_p[i][j] = p;
            wilcoxon_p[j][i] = p;
        }
    }
    Ok(ComparisonReport {
        runs,
        ranking,
        wilcoxon_p,
    })
}

fn spec(name: &str) -> FeatureSpec {
    FeatureSpec::parse(name).expect("static feature name parses")
}

/// Endogenous comparison: daily lag alone vs daily + weekly lags.
pub fn variants_endogenous(decomposed: bool) -> Vec<Variant> {
    let suffix = if decomposed { ".d" } else { "" };
    vec![
        Variant {
            name: format!("c24{suffix}"),
            features: vec![spec(&format!("c24{suffix}"))],
        },
        Variant {
            name: format!("c24{suffix}+c168{suffix}"),
            features: vec![spec(&format!("c24{suffix}")), spec(&format!("c168{suffix}"))],
        },
    ]
}

/// Exogenous comparison: the endogenous base plus every single weather
/// feature and every pair/triple drawn from `weather`.
pub fn variants_weather(base: &[FeatureSpec], weather: &[String]) -> Vec<Variant> {
    let mut out = vec![Variant {
        name: "base".to_string(),
        features: base.to_vec(),
    }];
    let mut add = |names: &[&String]| {
        let mut features = base.to_vec();
        let mut label = "base".to_string();
        for n in names {
            features.push(spec(n));
            label.push('+');
            label.push_str(n);
        }
        out.push(Variant {
            name: label,
            features,
        });
    };
    for (i, a) in weather.iter().enumerate() {
        add(&[a]);
        for (j, b) in weather.iter().enumerate().skip(i + 1) {
            add(&[a, b]);
            for c in weather.iter().skip(j + 1) {
                add(&[a, b, c]);
            }
        }
    }
    out
}

/// Raw vs decomposed representation of the same feature set.
pub fn variants_decomposition(features: &[FeatureSpec]) -> Vec<Variant> {
    let strip = |f: &FeatureSpec| -> FeatureSpec {
        spec(f.name.trim_end_matches(".d"))
    };
    let decorate = |f: &FeatureSpec| -> FeatureSpec {
        let decomposable = matches!(
            f.kind,
            FeatureKind::DemandLag { .. } | FeatureKind::HolidayLag { .. } | FeatureKind::Weather { .. }
        );
        if decomposable && !f.name.ends_with(".d") {
            spec(&format!("{}.d", f.name))
        } else {
            f.clone()
        }
    };
    vec![
        Variant {
            name: "raw".to_string(),
            features: features.iter().map(strip).collect(),
        },
        Variant {
            name: "decomposed".to_string(),
            features: features.iter().map(decorate).collect(),
        },
    ]
}

/// Time/holiday handling strategies on top of a base feature set: cyclical
/// day-of-week channels, categorical holidays, the weekly lag replaced by
/// the previous same-name holiday, and the combination.
pub fn variants_calendrical(base: &[FeatureSpec]) -> Vec<Variant> {
    let with = |extra: &[&str]| -> Vec<FeatureSpec> {
        let mut f = base.to_vec();
        f.extend(extra.iter().map(|n| spec(n)));
        f
    };
    let replace_weekly = |features: &[FeatureSpec]| -> Vec<FeatureSpec> {
        features
            .iter()
            .map(|f| match f.kind {
                FeatureKind::DemandLag {
                    lag_hours: 168,
                    decomposed,
                } => spec(if decomposed { "holiday_lag.d" } else { "holiday_lag" }),
                _ => f.clone(),
            })
            .collect()
    };
    let mut lagged_cat = replace_weekly(base);
    lagged_cat.push(spec("holiday_cat"));
    vec![
        Variant {
            name: "base".to_string(),
            features: base.to_vec(),
        },
        Variant {
            name: "base+time_cyc".to_string(),
            features: with(&["time_cyc"]),
        },
        Variant {
            name: "base+holiday_cat".to_string(),
            features: with(&["holiday_cat"]),
        },
        Variant {
            name: "holiday_lag".to_string(),
            features: replace_weekly(base),
        },
        Variant {
            name: "holiday_lag+holiday_cat".to_string(),
            features: lagged_cat,
        },
    ]
}
