//! RMSE objective, Adam, reduce-on-plateau scheduling, and the
//! mini-batch training loop.
//!
//! The loss minimized per batch is the mean squared error (same argmin
//! as RMSE, simpler gradients); all reported metrics are true RMSE.

use std::collections::BTreeMap;
use std::time::Instant;

use crate::data::{DatasetSplit, WindowSample};
use crate::error::{Error, Result};
use crate::model::{
    backward, embed, forward, forward_with_demo, init_params, ModelConfig, ModelParams,
};
use crate::numerics::Rng;

pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::Usage(format!(
            "rmse needs equal nonzero lengths, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let n = preds.len() as f64;
    let ss: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((ss / n).sqrt())
}

/// Adam over the flattened parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam_step: {} params, {} grads, state sized {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at flat index {i}"
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Reduce-on-plateau: cut lr by `factor` when the best train loss has not
/// strictly improved for `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    best: f64,
    epochs_since_improve: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauScheduler {
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            epochs_since_improve: 0,
        }
    }

    /// Feed one epoch's train loss; returns the lr to use next.
    pub fn observe(&mut self, train_loss: f64, current_lr: f64) -> f64 {
        if train_loss < self.best {
            self.best = train_loss;
            self.epochs_since_improve = 0;
            return current_lr;
        }
        self.epochs_since_improve += 1;
        if self.epochs_since_improve >= self.patience {
            self.epochs_since_improve = 0;
            (current_lr * self.factor).max(self.min_lr)
        } else {
            current_lr
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub lr0: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_lr: f64,
    pub seed: u64,
    /// Global-norm gradient clip; None disables.
    pub grad_clip: Option<f64>,
    pub eval_patience: usize,
    pub eval_min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            plateau_factor: 0.3,
            plateau_patience: 20,
            batch_size: 32,
            max_epochs: 500,
            min_lr: 1e-7,
            seed: 0,
            grad_clip: Some(5.0),
            eval_patience: 50,
            eval_min_delta: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rmse: f64,
    pub eval_rmse: f64,
    pub lr: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("epoch,train_rmse,eval_rmse,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_rmse, e.eval_rmse, e.lr
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

pub fn evaluate_rmse(
    params: &ModelParams,
    samples: &[WindowSample],
    demos: &BTreeMap<String, Vec<f64>>,
) -> Result<f64> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut targets = Vec::with_capacity(samples.len());
    for s in samples {
        let demo = demos.get(&s.region).ok_or_else(|| {
            Error::Validation(format!("no demographics for region {}", s.region))
        })?;
        let h0 = embed(demo, params)?;
        let (pred, _) = forward(&s.inputs, &h0, params)?;
        preds.push(pred);
        targets.push(s.target);
    }
    rmse(&preds, &targets)
}

/// Mini-batch training loop. Returns the parameters achieving the best
/// eval RMSE (train RMSE when the eval set is empty) plus the history.
pub fn train(
    split: &DatasetSplit,
    demos: &BTreeMap<String, Vec<f64>>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    if split.train.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut init_rng = rng.child(0);
    let mut params = init_params(model_cfg, &mut init_rng)?;
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len(), cfg.lr0);
    let mut scheduler =
        PlateauScheduler::new(cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut history = TrainHistory::default();

    let mut best_eval = f64::INFINITY;
    let mut best_params = params.clone();
    let mut epochs_since_eval_improve = 0usize;

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        let mut sq_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut grad_flat = vec![0.0; flat.len()];
            let scale = 2.0 / chunk.len() as f64;
            for &idx in chunk {
                let sample = &split.train[idx];
                let demo = demos.get(&sample.region).ok_or_else(|| {
                    Error::Validation(format!("no demographics for region {}", sample.region))
                })?;
                let (pred, cache) = forward_with_demo(&sample.inputs, demo, &params)?;
                let err = pred - sample.target;
                sq_sum += err * err;
                let g = backward(&cache, &params, scale * err)?;
                for (acc, gv) in grad_flat.iter_mut().zip(g.wrt.to_flat()) {
                    *acc += gv;
                }
            }
            if let Some(clip) = cfg.grad_clip {
                let norm: f64 = grad_flat.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    let s = clip / norm;
                    for g in &mut grad_flat {
                        *g *= s;
                    }
                }
            }
            adam.step(&mut flat, &grad_flat)?;
            params = ModelParams::from_flat(model_cfg, &flat)?;
        }
        let train_rmse = (sq_sum / split.train.len() as f64).sqrt();
        if !train_rmse.is_finite() {
            return Err(Error::Training(format!(
                "loss became non-finite at epoch {epoch} ({} epochs recorded)",
                history.epochs.len()
            )));
        }
        let eval_rmse = if split.eval.is_empty() {
            train_rmse
        } else {
            evaluate_rmse(&params, &split.eval, demos)?
        };
        let lr_used = adam.lr;
        history.epochs.push(EpochRecord {
            epoch,
            train_rmse,
            eval_rmse,
            lr: lr_used,
            wall_secs: started.elapsed().as_secs_f64(),
        });

        if eval_rmse + cfg.eval_min_delta < best_eval {
            best_eval = eval_rmse;
            best_params = params.clone();
            epochs_since_eval_improve = 0;
        } else {
            epochs_since_eval_improve += 1;
        }

        adam.lr = scheduler.observe(train_rmse, adam.lr);
        if adam.lr <= cfg.min_lr {
            break;
        }
        if epochs_since_eval_improve >= cfg.eval_patience {
            break;
        }
    }
    Ok((best_params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use chrono::NaiveDate;

    #[test]
    fn rmse_exact_match_is_zero() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn rmse_hand_computed() {
        let v = rmse(&[1.0, 3.0], &[0.0, 0.0]).unwrap();
        assert!((v - 5.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rmse_single_element() {
        assert_eq!(rmse(&[4.0], &[1.5]).unwrap(), 2.5);
    }

    #[test]
    fn rmse_empty_rejected() {
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        let mut st = AdamState::new(3, 0.1);
        st.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut params = vec![0.0];
        let mut st = AdamState::new(1, 0.1);
        st.step(&mut params, &[1.0]).unwrap();
        // bias-corrected first step is -lr * g / (|g| + eps)
        assert!((params[0] + 0.1).abs() < 1e-8, "{}", params[0]);
    }

    #[test]
    fn adam_deterministic() {
        let mut a = (vec![0.3, -0.7], AdamState::new(2, 0.01));
        let mut b = (vec![0.3, -0.7], AdamState::new(2, 0.01));
        for _ in 0..10 {
            a.1.step(&mut a.0, &[0.5, -0.25]).unwrap();
            b.1.step(&mut b.0, &[0.5, -0.25]).unwrap();
        }
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut params = vec![0.0];
        let mut st = AdamState::new(1, 0.1);
        assert!(st.step(&mut params, &[f64::NAN]).is_err());
    }

    #[test]
    fn plateau_keeps_lr_while_improving() {
        let mut s = PlateauScheduler::new(0.3, 20, 1e-7);
        let mut lr = 1e-4;
        for e in 0..50 {
            lr = s.observe(1.0 / (e + 1) as f64, lr);
        }
        assert_eq!(lr, 1e-4);
    }

    #[test]
    fn plateau_fires_after_exactly_patience_epochs() {
        let mut s = PlateauScheduler::new(0.3, 20, 1e-7);
        let mut lr = 1e-4;
        lr = s.observe(0.5, lr); // best
        for _ in 0..19 {
            lr = s.observe(0.5, lr);
            assert_eq!(lr, 1e-4);
        }
        lr = s.observe(0.5, lr); // 20th flat epoch
        assert!((lr - 3e-5).abs() < 1e-20, "{lr}");
    }

    #[test]
    fn plateau_floors_at_min_lr() {
        let mut s = PlateauScheduler::new(0.3, 1, 1e-7);
        let mut lr = 1e-4;
        for _ in 0..100 {
            lr = s.observe(0.5, lr);
        }
        assert_eq!(lr, 1e-7);
    }

    fn toy_split(n: usize) -> (DatasetSplit, BTreeMap<String, Vec<f64>>) {
        // targets are a smooth function of the window content
        let date = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
        let mut train = Vec::new();
        for k in 0..n {
            let base = k as f64 / n as f64;
            let inputs = Matrix::from_fn(3, 4, |i, j| {
                if j < 2 {
                    base + 0.05 * i as f64
                } else {
                    0.0
                }
            });
            train.push(WindowSample {
                region: "A".into(),
                inputs,
                target: (base * 2.0).sin() * 0.5,
                target_date: date,
            });
        }
        let split = DatasetSplit {
            train,
            eval: vec![],
            test_regions: vec![],
        };
        let mut demos = BTreeMap::new();
        demos.insert("A".to_string(), vec![0.5, -0.5]);
        (split, demos)
    }

    fn toy_model_cfg() -> ModelConfig {
        ModelConfig {
            input_dim: 4,
            hidden_dim: 8,
            num_layers: 2,
            demo_dim: 2,
            window_len: 3,
        }
    }

    #[test]
    fn memorizes_toy_set() {
        let (split, demos) = toy_split(10);
        let cfg = TrainConfig {
            lr0: 1e-2,
            max_epochs: 2000,
            batch_size: 10,
            eval_patience: usize::MAX,
            ..Default::default()
        };
        let (params, history) = train(&split, &demos, &toy_model_cfg(), &cfg).unwrap();
        let final_rmse = evaluate_rmse(&params, &split.train, &demos).unwrap();
        assert!(
            final_rmse < 1e-3,
            "train RMSE {final_rmse} after {} epochs",
            history.epochs.len()
        );
    }

    #[test]
    fn training_deterministic() {
        let (split, demos) = toy_split(8);
        let cfg = TrainConfig {
            lr0: 1e-3,
            max_epochs: 30,
            ..Default::default()
        };
        let (a, ha) = train(&split, &demos, &toy_model_cfg(), &cfg).unwrap();
        let (b, hb) = train(&split, &demos, &toy_model_cfg(), &cfg).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        assert_eq!(
            ha.epochs.iter().map(|e| e.train_rmse).collect::<Vec<_>>(),
            hb.epochs.iter().map(|e| e.train_rmse).collect::<Vec<_>>()
        );
    }

    #[test]
    fn zero_lr_epoch_leaves_params_unchanged() {
        let (split, demos) = toy_split(8);
        let model_cfg = toy_model_cfg();
        // one epoch at lr so small Adam cannot move past min_lr check:
        // verify directly with AdamState at lr = 0
        let mut rng = Rng::new(0).child(0);
        let params = init_params(&model_cfg, &mut rng).unwrap();
        let mut flat = params.to_flat();
        let before = flat.clone();
        let mut adam = AdamState::new(flat.len(), 0.0);
        let demo = &demos["A"];
        for s in &split.train {
            let h0 = embed(demo, &params).unwrap();
            let (pred, cache) = forward(&s.inputs, &h0, &params).unwrap();
            let g = backward(&cache, &params, 2.0 * (pred - s.target)).unwrap();
            adam.step(&mut flat, &g.wrt.to_flat()).unwrap();
        }
        assert_eq!(flat, before);
    }

    #[test]
    fn full_batch_boundary() {
        let (split, demos) = toy_split(6);
        let cfg = TrainConfig {
            lr0: 1e-3,
            batch_size: 100, // >= |train|
            max_epochs: 5,
            ..Default::default()
        };
        let (_, history) = train(&split, &demos, &toy_model_cfg(), &cfg).unwrap();
        assert_eq!(history.epochs.len(), 5);
    }
}
