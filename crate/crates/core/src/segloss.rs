//! Segmentation quality: Dice loss over binary masks, pixel-averaged binary
//! cross entropy over probability masks, and their mean.

use crate::error::{Error, Result};
use crate::imaging;
use crate::morphology::BinaryMask;

pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Per-pixel foreground probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl ProbMask {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || probs.len() != width * height {
            return Err(Error::arg(format!("probability mask {width}x{height} with {} entries", probs.len())));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::arg(format!("probability {p} outside [0, 1]")));
        }
        Ok(ProbMask { width, height, probs })
    }

    pub fn filled(width: usize, height: usize, p: f64) -> Result<Self> {
        ProbMask::new(width, height, vec![p; width * height])
    }

    /// Loads an 8- or 16-bit grayscale image scaled by its max sample value.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = imaging::decode_image(bytes)?;
        ProbMask::new(img.width(), img.height(), img.into_pixels())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Foreground where `p >= threshold`.
    pub fn binarize(&self, threshold: f64) -> BinaryMask {
        let bits = self.probs.iter().map(|&p| p >= threshold).collect();
        BinaryMask::new(self.width, self.height, bits).expect("shape already validated")
    }
}

fn check_same(w: usize, h: usize, ew: usize, eh: usize) -> Result<()> {
    if w != ew || h != eh {
        return Err(Error::DimensionMismatch { expected_width: ew, expected_height: eh, width: w, height: h });
    }
    Ok(())
}

/// `1 - 2|A∩B| / (|A| + |B|)`; two empty masks agree perfectly (loss 0).
pub fn dice_loss(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    check_same(b.width(), b.height(), a.width(), a.height())?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - 2.0 * inter as f64 / total as f64)
}

/// Mean over pixels of `-[y ln p' + (1-y) ln(1-p')]` with
/// `p' = clamp(p, ε, 1-ε)`.
pub fn pixel_bce_loss(pred: &ProbMask, gt: &BinaryMask, epsilon: f64) -> Result<f64> {
    check_same(gt.width(), gt.height(), pred.width(), pred.height())?;
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::arg(format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    let sum: f64 = pred
        .probs()
        .iter()
        .zip(gt.bits())
        .map(|(&p, &y)| {
            let p = p.clamp(epsilon, 1.0 - epsilon);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(sum / pred.probs().len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLossReport {
    pub dice: f64,
    pub bce: f64,
    pub average: f64,
}

impl SegLossReport {
    pub fn from_components(dice: f64, bce: f64) -> Self {
        SegLossReport { dice, bce, average: (dice + bce) / 2.0 }
    }
}

/// Dice on the prediction binarized at `threshold` (ties are foreground),
/// BCE on the raw probabilities.
pub fn seg_loss_report(pred: &ProbMask, gt: &BinaryMask, threshold: f64) -> Result<SegLossReport> {
    let dice = dice_loss(&pred.binarize(threshold), gt)?;
    let bce = pixel_bce_loss(pred, gt, DEFAULT_EPSILON)?;
    Ok(SegLossReport::from_components(dice, bce))
}
