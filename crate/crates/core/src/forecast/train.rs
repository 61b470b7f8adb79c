//! Mini-batch Adam training of the forecaster.

use gridpatch_autodiff::optim::{clip_global_norm, Adam};
use gridpatch_autodiff::{AutodiffError, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::ForecastModel;
use crate::data::WindowSample;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Train on at most this many windows, evenly spaced; 0 uses all.
    pub max_windows: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            learning_rate: 1e-3,
            batch_size: 16,
            shuffle: true,
            seed: 5,
            clip_norm: 1.0,
            max_windows: 0,
        }
    }
}

/// Evenly spaced subset of at most `max` items; `max = 0` keeps everything.
pub fn thin<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if max == 0 || items.len() <= max {
        return items.to_vec();
    }
    (0..max)
        .map(|i| items[i * items.len() / max].clone())
        .collect()
}

/// Per-unit mean and std over every encoder row of the windows.
pub fn fit_scaler(windows: &[WindowSample]) -> (Vec<f64>, Vec<f64>) {
    let n = windows[0].encoder_input.cols();
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    let mut count = 0.0;
    for w in windows {
        for r in 0..w.encoder_input.rows() {
            for (u, v) in w.encoder_input.row(r).iter().enumerate() {
                sum[u] += v;
                sq[u] += v * v;
            }
            count += 1.0;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
    let std = sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s / count - m * m).max(0.0).sqrt().max(1e-6))
        .collect();
    (mean, std)
}

/// Trains in place and returns the mean standardized squared error of each
/// epoch, measured on each window just before its batch update. The scaler is
/// fitted on the windows when the model is untrained.
pub fn train(
    model: &mut ForecastModel,
    windows: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if windows.is_empty() {
        return Err(Error::invalid("training needs at least one window"));
    }
    if cfg.batch_size == 0 || !(cfg.learning_rate >= 0.0) {
        return Err(Error::Config(
            "batch_size must be positive and learning_rate non-negative".into(),
        ));
    }
    if !model.is_trained() {
        let (mean, std) = fit_scaler(windows);
        model.set_scaler(mean, std)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate.max(f64::MIN_POSITIVE));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut losses = vec![0.0; windows.len()];
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let bound = model.params().bind(&mut g, true);
            let mut total = None;
            for &i in batch {
                let loss = model
                    .window_loss(&mut g, &bound, &windows[i])
                    .map_err(|e| diverged(e, epoch))?;
                losses[i] = g.value(loss).item();
                total = Some(match total {
                    None => loss,
                    Some(t) => g.add(t, loss)?,
                });
            }
            let total = total.expect("non-empty batch");
            let mean = g.scale(total, 1.0 / batch.len() as f64)?;
            let grads = g.backward(mean)?;
            let mut grads: Vec<Tensor> = bound.gradients(&grads, model.params());
            if grads.iter().any(|t| !t.all_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: "non-finite gradient".into(),
                });
            }
            if cfg.clip_norm > 0.0 {
                clip_global_norm(&mut grads, cfg.clip_norm);
            }
            if cfg.learning_rate > 0.0 {
                adam.step(model.params_mut(), &grads)?;
            }
        }
        let epoch_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("loss {epoch_loss}"),
            });
        }
        history.push(epoch_loss);
    }
    model.mark_trained();
    Ok(history)
}

/// Mean standardized loss of the model over windows, without training.
pub fn evaluate_loss(model: &ForecastModel, windows: &[WindowSample]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let mut g = Graph::new();
        let bound = model.params().bind(&mut g, false);
        let loss = model.window_loss(&mut g, &bound, w)?;
        total += g.value(loss).item();
    }
    Ok(total / windows.len().max(1) as f64)
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::Autodiff(AutodiffError::NonFinite(op)) => Error::Diverged {
            epoch,
            reason: format!("{op} produced a non-finite value"),
        },
        other => other,
    }
}
