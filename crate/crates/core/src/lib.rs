//! Day-ahead (24-step hourly) heat-demand forecasting toolkit: smart-meter
//! ingestion, outlier repair, seasonal decomposition, CWT scalogram features,
//! a from-scratch convolutional forecasting network, reference baselines and
//! an evaluation/statistics harness.

pub mod baselines;
pub mod cwt;
pub mod error;
pub mod experiment;
pub mod features;
pub mod forecast;
pub mod io;
mod linalg;
pub mod nn;
pub mod preprocess;
pub mod series;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
