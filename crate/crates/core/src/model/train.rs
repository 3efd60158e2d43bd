//! Mini-batch Adam training with on-the-fly augmentation and early stopping
//! on validation loss.

use serde::{Deserialize, Serialize};

use super::network::{accumulate_gradients, bce_with_logits, forward, ModelConfig, ParamArrays, RefModelParams};
use super::{adam_step, AdamState};
use crate::error::{Error, Result};
use crate::imaging::{augment, resize, sample_augmentation, AugmentationConfig, GrayImage};
use crate::labels::NUM_ABNORMALITIES;
use crate::rng::Stream;

// Shuffle streams are offset so they never coincide with the init stream.
const SHUFFLE_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 4,
            max_epochs: 30,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            early_stop_patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::arg("max_epochs must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::arg("Adam betas must lie in [0, 1)"));
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(Error::arg("adam_epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: GrayImage,
    pub labels: [bool; NUM_ABNORMALITIES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: RefModelParams,
    pub best_epoch: usize,
    /// Validation loss of the initial parameters.
    pub initial_validation_loss: f64,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

fn mean_loss(params: &RefModelParams, set: &[LabeledImage]) -> Result<f64> {
    let mut total = 0.0;
    for s in set {
        let a = forward(params, &s.image)?;
        total += bce_with_logits(&a.logits, &s.labels);
    }
    Ok(total / set.len() as f64)
}

fn at_side(set: &[LabeledImage], side: usize) -> Result<Vec<LabeledImage>> {
    set.iter().map(|s| Ok(LabeledImage { image: resize(&s.image, side, side)?, labels: s.labels })).collect()
}

/// Trains the reference model. Fully deterministic given the two seeds in
/// `cfg` and `aug`.
pub fn train(
    train_set: &[LabeledImage],
    validation_set: &[LabeledImage],
    model: &ModelConfig,
    cfg: &TrainConfig,
    aug: &AugmentationConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    aug.validate()?;
    if train_set.is_empty() || validation_set.is_empty() {
        return Err(Error::arg("training and validation sets must be non-empty"));
    }
    if model.input_side == 0 || model.hidden_units == 0 {
        return Err(Error::arg("model input_side and hidden_units must be positive"));
    }
    let train_set = at_side(train_set, model.input_side)?;
    let validation_set = at_side(validation_set, model.input_side)?;

    let mut params = RefModelParams::init(model, cfg.seed);
    let mut state = AdamState::new(&params);
    let mut grads = ParamArrays::zeros_like(&params.arrays);
    let initial_validation_loss = mean_loss(&params, &validation_set)?;

    let mut best = (params.clone(), initial_validation_loss, 0usize);
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut stopped_early = false;
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=cfg.max_epochs {
        Stream::new(cfg.seed, SHUFFLE_STREAM_BASE + epoch as u64).shuffle(&mut order);
        let mut train_total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grads.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            for (i, &idx) in batch.iter().enumerate() {
                let position = (b * cfg.batch_size + i) as u64;
                let draw = sample_augmentation(aug, (epoch as u64 - 1) * n as u64 + position);
                let img = augment(&train_set[idx].image, &draw, aug)?;
                train_total += accumulate_gradients(&params, img.pixels(), &train_set[idx].labels, weight, &mut grads);
            }
            adam_step(&mut params, &grads, &mut state, cfg);
        }
        let validation_loss = mean_loss(&params, &validation_set)?;
        log.push(EpochLog { epoch, train_loss: train_total / n as f64, validation_loss });
        log::debug!("epoch {epoch}: train {:.5} validation {validation_loss:.5}", train_total / n as f64);

        if validation_loss < best.1 {
            best = (params.clone(), validation_loss, epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best.0, best_epoch: best.2, initial_validation_loss, log, stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Bright blob in the upper-left quadrant marks Mass; the other labels
    /// are constant negatives.
    fn blob_set(n: usize, seed: u64) -> Vec<LabeledImage> {
        let mut s = Stream::new(seed, 0);
        (0..n)
            .map(|_| {
                let positive = s.next_f64() < 0.5;
                let noise: Vec<f64> = (0..64).map(|_| 0.2 * s.next_f64()).collect();
                let image = GrayImage::from_fn(8, 8, |x, y| {
                    let blob = positive && x < 4 && y < 4;
                    if blob {
                        0.9
                    } else {
                        noise[y * 8 + x]
                    }
                })
                .unwrap();
                LabeledImage { image, labels: [positive, false, false, false, false] }
            })
            .collect()
    }

    fn small() -> (ModelConfig, TrainConfig) {
        (
            ModelConfig { input_side: 8, hidden_units: 8 },
            TrainConfig { learning_rate: 1e-2, max_epochs: 8, seed: 4, ..Default::default() },
        )
    }

    #[test]
    fn separable_set_reduces_validation_loss() {
        let (model, cfg) = small();
        let out = train(&blob_set(60, 1), &blob_set(20, 2), &model, &cfg, &AugmentationConfig::default()).unwrap();
        let best = out.log.iter().map(|e| e.validation_loss).fold(f64::INFINITY, f64::min);
        assert!(best < out.initial_validation_loss);
        assert!(out.best_epoch >= 1);
        assert_eq!(out.log[out.best_epoch - 1].validation_loss, best);
    }

    #[test]
    fn training_is_replayable() {
        let (model, cfg) = small();
        let aug = AugmentationConfig { rng_seed: 8, ..Default::default() };
        let a = train(&blob_set(30, 1), &blob_set(10, 2), &model, &cfg, &aug).unwrap();
        let b = train(&blob_set(30, 1), &blob_set(10, 2), &model, &cfg, &aug).unwrap();
        assert_eq!(a, b);
        let bits = |o: &TrainOutcome| {
            o.log.iter().map(|e| (e.train_loss.to_bits(), e.validation_loss.to_bits())).collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn rejects_bad_config() {
        let (model, cfg) = small();
        let aug = AugmentationConfig::default();
        let zero_epochs = TrainConfig { max_epochs: 0, ..cfg.clone() };
        assert!(train(&blob_set(4, 1), &blob_set(4, 2), &model, &zero_epochs, &aug).is_err());
        assert!(train(&[], &blob_set(4, 2), &model, &cfg, &aug).is_err());
        assert!(train(&blob_set(4, 1), &[], &model, &cfg, &aug).is_err());
    }

    #[test]
    fn early_stopping_halts_on_plateau() {
        let (model, _) = small();
        // a huge learning rate diverges quickly, so validation loss stops
        // improving and patience runs out
        let cfg =
            TrainConfig { learning_rate: 5.0, max_epochs: 30, early_stop_patience: 2, seed: 1, ..Default::default() };
        let out = train(&blob_set(20, 1), &blob_set(10, 2), &model, &cfg, &AugmentationConfig::disabled()).unwrap();
        assert!(out.log.len() < 30);
        assert!(out.stopped_early);
        assert_eq!(out.log.len(), out.best_epoch + 2);
    }
}
