//! Mini-batch training loop: chronological batches, Adam, plateau decay,
//! early stopping and best-epoch weight restoration. Two worker lanes with
//! persistent tapes process each batch's halves in parallel; gradients are
//! combined in fixed sample-index order.

use rand_chacha::ChaCha8Rng;
use std::time::Instant;

use super::model::{DropoutPlan, Gradients, Model, Scratch, Tape};
use super::optim::{adam_step, AdamParams, AdamState, PlateauScheduler, IMPROVEMENT_EPSILON};
use super::tensor::Tensor3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub shuffle: bool,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 32,
            max_epochs: 1000,
            patience: 50,
            scheduler_factor: 0.9,
            scheduler_patience: 10,
            shuffle: false,
            adam: AdamParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Wall-clock seconds; excluded from equality so that determinism
    /// contracts can compare histories bit-for-bit.
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss (ties -> earliest).
    pub best_epoch: usize,
}

impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.best_epoch == other.best_epoch
            && self.epochs.len() == other.epochs.len()
            && self.epochs.iter().zip(&other.epochs).all(|(a, b)| {
                a.train_loss == b.train_loss && a.val_loss == b.val_loss && a.lr == b.lr
            })
    }
}

/// One worker lane's reusable buffers.
struct Lane {
    tape: Tape,
    grads: Gradients,
    scratch: Scratch,
    fx: Vec<f64>,
    fy: Vec<f64>,
}

impl Lane {
    fn new(model: &Model) -> Lane {
        Lane {
            tape: model.new_tape(),
            grads: Gradients::zeros_like(model),
            scratch: model.new_scratch(),
            fx: Vec::new(),
            fy: Vec::new(),
        }
    }

    fn load(&mut self, xs: &[Tensor3], ys: &[Vec<f64>], indices: &[usize]) {
        self.fx.clear();
        self.fy.clear();
        for &i in indices {
            self.fx.extend_from_slice(&xs[i].data);
            self.fy.extend_from_slice(&ys[i]);
        }
    }

    fn run(&mut self, model: &Model, b: usize, plan: &DropoutPlan) -> Result<f64> {
        model.forward_into(&self.fx, b, Some(plan), &mut self.tape)?;
        Ok(model.backward_into(&self.tape, &self.fy, &mut self.grads, &mut self.scratch))
    }
}

/// Mean MSE of the model over a sample set (dropout in infer mode).
pub fn evaluate(model: &Model, xs: &[Tensor3], ys: &[Vec<f64>], batch: usize) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::parameter("evaluate: empty sample set".to_string()));
    }
    let out_len = model.output_len();
    let mut tape = model.new_tape();
    let mut flat = Vec::new();
    let mut se = 0.0;
    let mut count = 0usize;
    for chunk_start in (0..xs.len()).step_by(batch) {
        let chunk_end = (chunk_start + batch).min(xs.len());
        let b = chunk_end - chunk_start;
        flat.clear();
        for t in &xs[chunk_start..chunk_end] {
            flat.extend_from_slice(&t.data);
        }
        model.forward_into(&flat, b, None, &mut tape)?;
        let pred = tape.predictions();
        for (i, y) in ys[chunk_start..chunk_end].iter().enumerate() {
            for (j, &target) in y.iter().enumerate() {
                let e = pred[i * out_len + j] - target;
                se += e * e;
            }
        }
        count += b * out_len;
    }
    Ok(se / count as f64)
}

/// Train with early stopping; returns the history and leaves the model at
/// the weights of the best validation epoch.
pub fn train(
    model: &mut Model,
    train_x: &[Tensor3],
    train_y: &[Vec<f64>],
    val_x: &[Tensor3],
    val_y: &[Vec<f64>],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainHistory> {
    if train_x.is_empty() || val_x.is_empty() {
        return Err(Error::parameter(
            "train/validation partitions must be nonempty".to_string(),
        ));
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::parameter("sample/target count mismatch".to_string()));
    }
    let widths = model.dropout_widths();
    let mut lr = cfg.lr;
    let mut scheduler = PlateauScheduler::new(cfg.scheduler_factor, cfg.scheduler_patience);
    let mut state = AdamState::new(model.param_count(), cfg.adam);
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params: Vec<f64> = model.flat_params();
    let mut bad_epochs = 0usize;
    let n = train_x.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut left = Lane::new(model);
    let mut right = Lane::new(model);
    let mut combined = Gradients::zeros_like(model);
    let mut val_tape = model.new_tape();
    let mut val_flat = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        if cfg.shuffle {
            fisher_yates(&mut order, rng);
        }
        let mut train_se_weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let b = chunk.len();
            let plan = model.draw_dropout_plan(b, rng);
            let split = b / 2;
            let loss = if b >= 4 {
                let (idx_l, idx_r) = chunk.split_at(split);
                left.load(train_x, train_y, idx_l);
                right.load(train_x, train_y, idx_r);
                let plan_l = plan.slice(&widths, 0, split);
                let plan_r = plan.slice(&widths, split, b - split);
                let model_ref = &*model;
                let (res_l, res_r) = rayon::join(
                    || left.run(model_ref, split, &plan_l),
                    || right.run(model_ref, b - split, &plan_r),
                );
                let (loss_l, loss_r) = (res_l?, res_r?);
                let (wl, wr) = (split as f64 / b as f64, (b - split) as f64 / b as f64);
                combined.assign_scaled(&left.grads, wl);
                combined.add_scaled(&right.grads, wr);
                adam_step(model, &combined, &mut state, lr);
                wl * loss_l + wr * loss_r
            } else {
                left.load(train_x, train_y, chunk);
                let loss = left.run(model, b, &plan)?;
                combined.assign_scaled(&left.grads, 1.0);
                adam_step(model, &combined, &mut state, lr);
                loss
            };
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "epoch {epoch}: non-finite training loss {loss}"
                )));
            }
            train_se_weighted += loss * b as f64;
        }
        let train_loss = train_se_weighted / n as f64;
        let val_loss = evaluate_with(
            model,
            val_x,
            val_y,
            cfg.batch_size.max(32),
            &mut val_tape,
            &mut val_flat,
        )?;
        if !val_loss.is_finite() {
            return Err(Error::numeric(format!(
                "epoch {epoch}: non-finite validation loss {val_loss}"
            )));
        }
        history.epochs.push(EpochRecord {
            train_loss,
            val_loss,
            lr,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if val_loss < best_val - IMPROVEMENT_EPSILON {
            best_val = val_loss;
            history.best_epoch = epoch;
            best_params = model.flat_params();
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                break;
            }
        }
        lr = scheduler.observe(val_loss, lr);
    }
    model.set_flat_params(&best_params)?;
    Ok(history)
}

fn evaluate_with(
    model: &Model,
    xs: &[Tensor3],
    ys: &[Vec<f64>],
    batch: usize,
    tape: &mut Tape,
    flat: &mut Vec<f64>,
) -> Result<f64> {
    let out_len = model.output_len();
    let mut se = 0.0;
    let mut count = 0usize;
    for chunk_start in (0..xs.len()).step_by(batch) {
        let chunk_end = (chunk_start + batch).min(xs.len());
        let b = chunk_end - chunk_start;
        flat.clear();
        for t in &xs[chunk_start..chunk_end] {
            flat.extend_from_slice(&t.data);
        }
        model.forward_into(flat, b, None, tape)?;
        let pred = tape.predictions();
        for (i, y) in ys[chunk_start..chunk_end].iter().enumerate() {
            for (j, &target) in y.iter().enumerate() {
                let e = pred[i * out_len + j] - target;
                se += e * e;
            }
        }
        count += b * out_len;
    }
    Ok(se / count as f64)
}

fn fisher_yates(order: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::Rng;
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, ConvParams, DenseParams, Layer};
    use rand::SeedableRng;

    fn scalar_input(v: f64) -> Tensor3 {
        Tensor3::from_data(1, 1, 1, vec![v]).unwrap()
    }

    #[test]
    fn antagonistic_validation_stops_after_patience_and_restores_best() {
        let mut model = Model::new(
            (1, 1, 1),
            vec![
                Layer::Flatten,
                Layer::Dense(DenseParams::zeros(1, 1, Activation::Identity)),
            ],
        )
        .unwrap();
        // Training pulls predictions toward +1; validation wants -1, so
        // validation loss increases strictly from epoch 1.
        let cfg = TrainConfig {
            lr: 0.005,
            batch_size: 1,
            max_epochs: 1000,
            patience: 50,
            ..TrainConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let history = train(
            &mut model,
            &[scalar_input(1.0)],
            &[vec![1.0]],
            &[scalar_input(1.0)],
            &[vec![-1.0]],
            &cfg,
            &mut rng,
        )
        .unwrap();
        assert_eq!(history.best_epoch, 1);
        assert_eq!(history.epochs.len(), 51);
        for w in history.epochs.windows(2) {
            assert!(w[1].val_loss > w[0].val_loss);
        }
        // restored epoch-1 weights reproduce the epoch-1 validation loss
        let val_now = evaluate(&model, &[scalar_input(1.0)], &[vec![-1.0]], 8).unwrap();
        assert_eq!(val_now, history.epochs[0].val_loss);
    }

    #[test]
    fn tiny_model_overfits_small_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = Model::new(
            (4, 4, 1),
            vec![
                Layer::Conv(ConvParams::kaiming(1, 4, &mut rng)),
                Layer::Flatten,
                Layer::Dense(DenseParams::kaiming(64, 16, Activation::LeakyRelu, &mut rng)),
                Layer::Dense(DenseParams::kaiming(16, 2, Activation::Identity, &mut rng)),
            ],
        )
        .unwrap();
        use rand::Rng;
        let xs: Vec<Tensor3> = (0..4)
            .map(|_| {
                Tensor3::from_data(4, 4, 1, (0..16).map(|_| rng.random::<f64>()).collect()).unwrap()
            })
            .collect();
        let ys: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.random::<f64>()).collect())
            .collect();
        let cfg = TrainConfig {
            lr: 0.01,
            batch_size: 4,
            max_epochs: 500,
            patience: 500,
            ..TrainConfig::default()
        };
        train(&mut model, &xs, &ys, &xs, &ys, &cfg, &mut rng).unwrap();
        let mse = evaluate(&model, &xs, &ys, 8).unwrap();
        assert!(mse < 1e-2, "train mse {mse}");
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let run = || {
            let mut init_rng = ChaCha8Rng::seed_from_u64(7);
            let mut model = Model::new(
                (2, 2, 1),
                vec![
                    Layer::Flatten,
                    Layer::Dense(DenseParams::kaiming(4, 8, Activation::LeakyRelu, &mut init_rng)),
                    Layer::Dropout(0.2),
                    Layer::Dense(DenseParams::kaiming(8, 2, Activation::Identity, &mut init_rng)),
                ],
            )
            .unwrap();
            use rand::Rng;
            let xs: Vec<Tensor3> = (0..10)
                .map(|_| {
                    Tensor3::from_data(2, 2, 1, (0..4).map(|_| init_rng.random::<f64>()).collect())
                        .unwrap()
                })
                .collect();
            let ys: Vec<Vec<f64>> = (0..10)
                .map(|_| (0..2).map(|_| init_rng.random::<f64>()).collect())
                .collect();
            let cfg = TrainConfig {
                lr: 0.01,
                batch_size: 4,
                max_epochs: 30,
                patience: 30,
                shuffle: true,
                ..TrainConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let history = train(
                &mut model,
                &xs[..8],
                &ys[..8],
                &xs[8..],
                &ys[8..],
                &cfg,
                &mut rng,
            )
            .unwrap();
            (history, model.flat_params())
        };
        let (h1, p1) = run();
        let (h2, p2) = run();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
    }

    #[test]
    fn rejects_empty_partitions() {
        let mut model = Model::new(
            (1, 1, 1),
            vec![
                Layer::Flatten,
                Layer::Dense(DenseParams::zeros(1, 1, Activation::Identity)),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = train(
            &mut model,
            &[],
            &[],
            &[scalar_input(0.0)],
            &[vec![0.0]],
            &TrainConfig::default(),
            &mut rng,
        );
        assert!(err.is_err());
    }
}
