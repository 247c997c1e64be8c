//! Minibatch SGD with momentum, step decay and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// The learning rate is multiplied by `decay` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay: f64,
    pub patience: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            epochs: 30,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            decay_every: 10,
            decay: 0.5,
            patience: 5,
            clip: 5.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub train_loss: Vec<f64>,
    pub heldout_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Runs the loop over `n_train` examples.
///
/// `batch` returns the summed loss, the summed example weight and flattened
/// gradients (in `params` order) for a batch of example indices. `heldout`
/// scores the current model; the best-scoring parameters are restored at
/// the end.
pub fn fit<M: Clone>(
    model: &mut M,
    n_train: usize,
    cfg: &FitConfig,
    mut batch: impl FnMut(&M, &[usize]) -> (f64, f64, Vec<f64>),
    params: impl Fn(&mut M) -> Vec<&mut [f64]>,
    mut heldout: impl FnMut(&M) -> f64,
) -> Result<FitReport> {
    if n_train == 0 {
        return Err(Error::Model("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f17);
    let mut order: Vec<usize> = (0..n_train).collect();
    let n_params: usize = params(model).iter().map(|s| s.len()).sum();
    let mut velocity = vec![0.0; n_params];
    let mut report = FitReport::default();
    let mut best = (heldout(model), model.clone());
    let mut since_best = 0;
    let mut lr = cfg.lr;
    for epoch in 0..cfg.epochs {
        if epoch > 0 && cfg.decay_every > 0 && epoch % cfg.decay_every == 0 {
            lr *= cfg.decay;
        }
        order.shuffle(&mut rng);
        let (mut total, mut weight) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let (loss, w, mut g) = batch(model, chunk);
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite training loss in epoch {epoch}")));
            }
            total += loss;
            weight += w;
            if w <= 0.0 {
                continue;
            }
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt() / w;
            let scale = if cfg.clip > 0.0 && norm > cfg.clip {
                cfg.clip / norm
            } else {
                1.0
            } / w;
            for x in &mut g {
                *x *= scale;
            }
            let mut k = 0;
            for s in params(model) {
                for p in s.iter_mut() {
                    velocity[k] = cfg.momentum * velocity[k] - lr * g[k];
                    *p += velocity[k];
                    k += 1;
                }
            }
        }
        let train = total / weight.max(f64::MIN_POSITIVE);
        let held = heldout(model);
        if !train.is_finite() || !held.is_finite() {
            return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
        }
        report.train_loss.push(train);
        report.heldout_loss.push(held);
        if held < best.0 {
            best = (held, model.clone());
            report.best_epoch = epoch + 1;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    *model = best.1;
    Ok(report)
}
