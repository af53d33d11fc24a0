//! Adam with bias correction and the reduce-on-plateau learning-rate rule.

use super::model::{Gradients, Model};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter, aligned with the
/// model's canonical flat parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub hyper: AdamParams,
}

impl AdamState {
    pub fn new(param_count: usize, hyper: AdamParams) -> AdamState {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            step: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update:
/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
pub fn adam_step(model: &mut Model, grads: &Gradients, state: &mut AdamState, lr: f64) {
    use crate::nn::layers::Layer;
    use crate::nn::model::LayerGrads;
    state.step += 1;
    let AdamParams { beta1, beta2, epsilon } = state.hyper;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let mut offset = 0usize;
    let mut update = |params: &mut [f64], g_slice: &[f64]| {
        debug_assert_eq!(params.len(), g_slice.len());
        let m = &mut state.m[offset..offset + params.len()];
        let v = &mut state.v[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = g_slice[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        offset += params.len();
    };
    for (layer, lg) in model.layers.iter_mut().zip(&grads.layers) {
        match (layer, lg) {
            (Layer::Conv(p), LayerGrads::Conv { kernels, bias }) => {
                update(&mut p.kernels, kernels);
                update(&mut p.bias, bias);
            }
            (Layer::Dense(p), LayerGrads::Dense { weights, bias }) => {
                update(&mut p.weights, weights);
                update(&mut p.bias, bias);
            }
            _ => {}
        }
    }
}

/// Minimum decrease in validation loss that counts as an improvement for
/// the scheduler and early stopping.
pub const IMPROVEMENT_EPSILON: f64 = 1e-12;

/// Decays the learning rate by `factor` after `patience` consecutive epochs
/// without improvement; the counter resets on improvement or decay.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> PlateauScheduler {
        PlateauScheduler {
            factor,
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Observe one epoch's validation loss; returns the learning rate to use
    /// from the next epoch on.
    pub fn observe(&mut self, val_loss: f64, lr: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(best) => val_loss < best - IMPROVEMENT_EPSILON,
        };
        if improved {
            self.best = Some(val_loss);
            self.bad_epochs = 0;
            lr
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.bad_epochs = 0;
                lr * self.factor
            } else {
                lr
            }
        }
    }
}
