use serde::{Deserialize, Serialize};

use super::{horizontal_flip, perturb_intensity, rotate, GrayImage};
use crate::error::{Error, Result};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub flip_probability: f64,
    pub max_rotation_degrees: f64,
    pub max_intensity_fraction: f64,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            flip_probability: 0.5,
            max_rotation_degrees: 7.0,
            max_intensity_fraction: 0.10,
            rng_seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// No flips, no rotation, unit intensity.
    pub fn disabled() -> Self {
        AugmentationConfig {
            flip_probability: 0.0,
            max_rotation_degrees: 0.0,
            max_intensity_fraction: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::arg(format!("flip_probability {} outside [0, 1]", self.flip_probability)));
        }
        if !(0.0..=45.0).contains(&self.max_rotation_degrees) {
            return Err(Error::arg(format!("max_rotation_degrees {} outside [0, 45]", self.max_rotation_degrees)));
        }
        if !(0.0..1.0).contains(&self.max_intensity_fraction) {
            return Err(Error::arg(format!("max_intensity_fraction {} outside [0, 1)", self.max_intensity_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationSample {
    pub flip: bool,
    pub degrees: f64,
    pub factor: f64,
}

/// Draws the augmentation for `draw_index`. The result depends only on the
/// config seed and the index, never on earlier draws.
pub fn sample_augmentation(cfg: &AugmentationConfig, draw_index: u64) -> AugmentationSample {
    let mut s = Stream::new(cfg.rng_seed, draw_index);
    let flip = s.next_f64() < cfg.flip_probability;
    // `+ 0.0` folds a negative zero from the degenerate range into 0.
    let degrees = (2.0 * s.next_f64() - 1.0) * cfg.max_rotation_degrees + 0.0;
    let factor = 1.0 + (2.0 * s.next_f64() - 1.0) * cfg.max_intensity_fraction;
    AugmentationSample { flip, degrees, factor }
}

/// Applies flip, then rotation, then intensity scaling.
pub fn augment(img: &GrayImage, sample: &AugmentationSample, cfg: &AugmentationConfig) -> Result<GrayImage> {
    let flipped;
    let base = if sample.flip {
        flipped = horizontal_flip(img);
        &flipped
    } else {
        img
    };
    let rotated = rotate(base, sample.degrees);
    perturb_intensity(&rotated, sample.factor, cfg.max_intensity_fraction)
}
