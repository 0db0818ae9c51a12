use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{init_model, loss_and_gradient, mse, Example, ModelParams, DEFAULT_HIDDEN};
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub epochs: usize,
    pub gradient_clip_norm: f64,
    pub early_stop_patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            epochs: 200,
            gradient_clip_norm: 5.0,
            early_stop_patience: 20,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(domain("hidden size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(domain("learning rate must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.rmsprop_decay) {
            return Err(domain("RMSProp decay must be in [0, 1)"));
        }
        if self.rmsprop_epsilon.is_nan() || self.rmsprop_epsilon <= 0.0 {
            return Err(domain("RMSProp epsilon must be positive"));
        }
        if self.gradient_clip_norm.is_nan() || self.gradient_clip_norm <= 0.0 {
            return Err(domain("gradient clip norm must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(domain("validation fraction must be in [0, 1)"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Vec<String> {
        vec![
            format!("train.hidden={}", self.hidden),
            format!("train.learning_rate={}", self.learning_rate),
            format!("train.rmsprop_decay={}", self.rmsprop_decay),
            format!("train.rmsprop_epsilon={}", self.rmsprop_epsilon),
            format!("train.epochs={}", self.epochs),
            format!("train.gradient_clip_norm={}", self.gradient_clip_norm),
            format!("train.early_stop_patience={}", self.early_stop_patience),
            format!("train.validation_fraction={}", self.validation_fraction),
            format!("train.seed={}", self.seed),
        ]
    }
}

/// RMSProp state: `a <- rho a + (1 - rho) g^2`, `theta <- theta - lr g / (sqrt(a) + eps)`.
#[derive(Debug, Clone)]
pub struct Rmsprop {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_sq: Vec<f64>,
}

impl Rmsprop {
    pub fn new(len: usize, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        Self { learning_rate, decay, epsilon, mean_sq: vec![0.0; len] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, g), a) in params.iter_mut().zip(grad).zip(&mut self.mean_sq) {
            *a = self.decay * *a + (1.0 - self.decay) * g * g;
            *p -= self.learning_rate * g / (a.sqrt() + self.epsilon);
        }
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`. Returns the norm
/// before clipping.
pub fn clip_gradient(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub validation_pieces: Vec<usize>,
}

/// Trains a fresh model. A seeded fraction of the examples is held out for
/// early stopping; the parameters with the lowest held-out error (training
/// error when nothing is held out) are returned. Epoch 0 in the log is the
/// untrained model.
pub fn train(data: &[Example], input_dim: usize, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    train_from(data, init_model(input_dim, cfg.hidden, cfg.seed), cfg)
}

/// [`train`] starting from given parameters instead of a fresh
/// initialization. `cfg.hidden` is ignored.
pub fn train_from(data: &[Example], init: ModelParams, cfg: &TrainConfig) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(domain("no training examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.len() >= 2 && cfg.validation_fraction > 0.0 {
        ((cfg.validation_fraction * data.len() as f64).round() as usize).clamp(1, data.len() - 1)
    } else {
        0
    };
    let mut val_idx: Vec<usize> = order[..n_val].to_vec();
    val_idx.sort_unstable();
    let mut train_idx: Vec<usize> = order[n_val..].to_vec();
    train_idx.sort_unstable();
    let train_set: Vec<&Example> = train_idx.iter().map(|&i| &data[i]).collect();
    let val_set: Vec<&Example> = val_idx.iter().map(|&i| &data[i]).collect();

    let mut params = init;
    let mut opt = Rmsprop::new(params.flatten().len(), cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_epsilon);
    let score = |p: &ModelParams| -> Result<(f64, Option<f64>)> {
        let tr = mse(p, &train_set)?;
        let va = if val_set.is_empty() { None } else { Some(mse(p, &val_set)?) };
        Ok((tr, va))
    };

    let (tr0, va0) = score(&params)?;
    let mut log = TrainLog { validation_pieces: val_idx.clone(), ..Default::default() };
    log.epochs.push(EpochLog { epoch: 0, train_mse: tr0, val_mse: va0 });
    let mut best = (va0.unwrap_or(tr0), params.clone(), 0usize);
    if !best.0.is_finite() {
        return Err(Error::NonFinite("loss at epoch 0 is not finite".into()));
    }

    let mut piece_order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        piece_order.shuffle(&mut rng);
        let mut sse = 0.0;
        let mut steps = 0usize;
        for &i in &piece_order {
            let ex = &data[i];
            let (loss, mut grad) = loss_and_gradient(&params, &[ex])?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("non-finite loss at epoch {epoch}, piece {i}")));
            }
            let norm = clip_gradient(&mut grad, cfg.gradient_clip_norm);
            debug!("epoch {epoch} piece {i} loss {loss:.6} grad-norm {norm:.4}");
            opt.step(params.flatten_mut(), &grad);
            sse += loss * ex.targets.len() as f64;
            steps += ex.targets.len();
        }
        let train_mse = sse / steps.max(1) as f64;
        let val_mse = if val_set.is_empty() { None } else { Some(mse(&params, &val_set)?) };
        let monitored = val_mse.unwrap_or(train_mse);
        if !monitored.is_finite() {
            return Err(Error::NonFinite(format!("non-finite validation loss at epoch {epoch}")));
        }
        info!("epoch {epoch}: train mse {train_mse:.6}, validation mse {val_mse:?}");
        log.epochs.push(EpochLog { epoch, train_mse, val_mse });
        if monitored < best.0 {
            best = (monitored, params.clone(), epoch);
        } else if epoch - best.2 >= cfg.early_stop_patience {
            info!("early stop at epoch {epoch}, best epoch {}", best.2);
            break;
        }
    }
    log.best_epoch = best.2;
    Ok((best.1, log))
}
