use serde::{Deserialize, Serialize};

use super::model::{CnnModel, Gradients};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a `min_delta` validation improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            min_delta: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample SSE over the epoch's minibatches.
    pub train_sse: f64,
    /// Mean per-sample SSE on the validation part after the epoch.
    pub val_sse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation SSE.
    pub model: CnnModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(model: &CnnModel, cfg: &TrainConfig) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self { beta1: cfg.beta1, beta2: cfg.beta2, epsilon: cfg.epsilon, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn update(&mut self, model: &mut CnnModel, grads: &Gradients, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in model.params_mut().into_iter().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Mean per-sample SSE over the given indices.
pub fn mean_sse(model: &CnnModel, images: &[Tensor3], labels: &[Vec<f64>], indices: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &i in indices {
        let y = model.predict(&images[i])?;
        total += super::model::sse_loss(&y, &labels[i])?;
    }
    Ok(total / indices.len().max(1) as f64)
}

fn run_epoch(
    model: &mut CnnModel,
    adam: &mut Adam,
    images: &[Tensor3],
    labels: &[Vec<f64>],
    train: &[usize],
    cfg: &TrainConfig,
    rng: &mut Rng,
    grads: &mut Gradients,
) -> Result<f64> {
    let mut order = train.to_vec();
    rng.shuffle(&mut order);
    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size.max(1)) {
        grads.fill_zero();
        let mut batch_loss = 0.0;
        // Partial gradients are reduced in batch-index order.
        for &i in batch {
            batch_loss += model.accumulate_gradients(&images[i], &labels[i], grads)?;
        }
        if !batch_loss.is_finite() || !grads.is_finite() {
            return Err(Error::Numerical(format!("training diverged: minibatch loss {batch_loss}")));
        }
        grads.scale(1.0 / batch.len() as f64);
        adam.update(model, grads, cfg.learning_rate);
        total += batch_loss;
    }
    Ok(total / train.len() as f64)
}

/// Minibatch Adam on the SSE loss with patience-based early stopping on the
/// validation part. Deterministic given `rng`'s seed.
pub fn train(
    mut model: CnnModel,
    images: &[Tensor3],
    labels: &[Vec<f64>],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    rng: &mut Rng,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::InsufficientData("training and validation parts must be nonempty".into()));
    }
    let mut adam = Adam::new(&model, cfg);
    let mut grads = Gradients::zeros_like(&model);
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, model.clone(), 0);
    let mut reference = f64::INFINITY;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let train_sse = run_epoch(&mut model, &mut adam, images, labels, train_idx, cfg, rng, &mut grads)?;
        let val_sse = mean_sse(&model, images, labels, val_idx)?;
        if !val_sse.is_finite() {
            return Err(Error::Numerical(format!("validation loss became {val_sse} at epoch {epoch}")));
        }
        let rec = EpochRecord { epoch, train_sse, val_sse };
        on_epoch(&rec);
        history.push(rec);
        if val_sse < best.0 {
            best = (val_sse, model.clone(), epoch);
        }
        if val_sse < reference - cfg.min_delta {
            reference = val_sse;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    if best.2 == 0 {
        // No epoch improved on +inf; only possible with zero epochs.
        best.1 = model;
    }
    Ok(TrainOutcome { model: best.1, history, best_epoch: best.2 })
}

/// Picks the learning rate whose single training epoch ends with the lowest
/// training SSE, starting every candidate from the same initial model.
pub fn lr_sweep(
    model: &CnnModel,
    images: &[Tensor3],
    labels: &[Vec<f64>],
    train_idx: &[usize],
    candidates: &[f64],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut results = Vec::with_capacity(candidates.len());
    for &lr in candidates {
        let mut m = model.clone();
        let c = TrainConfig { learning_rate: lr, ..*cfg };
        let mut adam = Adam::new(&m, &c);
        let mut grads = Gradients::zeros_like(&m);
        let mut rng = Rng::new(seed);
        let loss = match run_epoch(&mut m, &mut adam, images, labels, train_idx, &c, &mut rng, &mut grads) {
            Ok(l) => l,
            Err(Error::Numerical(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        results.push((lr, loss));
    }
    let best = results
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|r| r.0)
        .ok_or_else(|| Error::InvalidArgument("empty learning-rate grid".into()))?;
    Ok((best, results))
}
