//! One-hidden-layer reference classifier over a downsampled image:
//! `hidden = relu(W1 x + b1)`, `z = W2 hidden + b2`, `p = sigmoid(z)`.
//! Loss is the label-averaged stable BCE-with-logits; gradients are
//! derived by hand.

use serde::{Deserialize, Serialize};

use super::ScoreVector;
use crate::error::{Error, Result};
use crate::imaging::{resize, GrayImage};
use crate::labels::NUM_ABNORMALITIES;
use crate::rng::Stream;

const OUT: usize = NUM_ABNORMALITIES;
const MAGIC: &[u8; 4] = b"CXRM";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_side: usize,
    pub hidden_units: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { input_side: 32, hidden_units: 64 }
    }
}

/// Parameter-shaped storage; also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArrays {
    /// `hidden × input_side²`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `5 × hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ParamArrays {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        ParamArrays {
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; OUT * hidden],
            b2: vec![0.0; OUT],
        }
    }

    pub fn zeros_like(other: &ParamArrays) -> Self {
        ParamArrays {
            w1: vec![0.0; other.w1.len()],
            b1: vec![0.0; other.b1.len()],
            w2: vec![0.0; other.w2.len()],
            b2: vec![0.0; other.b2.len()],
        }
    }

    /// Slices in declaration order.
    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn fill(&mut self, value: f64) {
        for s in self.slices_mut() {
            s.fill(value);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefModelParams {
    pub input_side: usize,
    pub hidden_units: usize,
    pub arrays: ParamArrays,
}

impl RefModelParams {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        RefModelParams {
            input_side: cfg.input_side,
            hidden_units: cfg.hidden_units,
            arrays: ParamArrays::zeros(cfg.input_side * cfg.input_side, cfg.hidden_units),
        }
    }

    /// He-uniform weights, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut p = RefModelParams::zeros(cfg);
        let d = p.input_dim() as f64;
        let h = cfg.hidden_units as f64;
        let mut s = Stream::new(seed, 0);
        let a1 = (6.0 / d).sqrt();
        p.arrays.w1.iter_mut().for_each(|w| *w = s.uniform(-a1, a1));
        let a2 = (6.0 / h).sqrt();
        p.arrays.w2.iter_mut().for_each(|w| *w = s.uniform(-a2, a2));
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_side * self.input_side
    }

    /// Flat little-endian format: magic, version, input side, hidden units
    /// (each `u32`), then `W1, b1, W2, b2` as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.arrays.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.input_side as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden_units as u32).to_le_bytes());
        for s in self.arrays.slices() {
            for v in s {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |offset: usize, message: &str| Error::Decode { offset, message: message.to_string() };
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad(0, "not a model parameter file"));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        if word(4) != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!("model file version {}", word(4))));
        }
        let cfg = ModelConfig { input_side: word(8) as usize, hidden_units: word(12) as usize };
        let mut p = RefModelParams::zeros(&cfg);
        if bytes.len() != 16 + 8 * p.arrays.len() {
            return Err(bad(16, "parameter payload length does not match header"));
        }
        let mut at = 16;
        for s in p.arrays.slices_mut() {
            for v in s.iter_mut() {
                *v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
                at += 8;
            }
        }
        Ok(p)
    }

    /// Flattens an image at the model's input resolution.
    pub fn input_vector(&self, img: &GrayImage) -> Result<Vec<f64>> {
        if img.width() == self.input_side && img.height() == self.input_side {
            Ok(img.pixels().to_vec())
        } else {
            Ok(resize(img, self.input_side, self.input_side)?.into_pixels())
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: [f64; OUT],
    pub probs: ScoreVector,
}

fn forward_vec(params: &RefModelParams, x: &[f64]) -> Activations {
    let d = params.input_dim();
    let h = params.hidden_units;
    let a = &params.arrays;
    let pre_hidden: Vec<f64> = (0..h)
        .map(|j| {
            let row = &a.w1[j * d..(j + 1) * d];
            row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + a.b1[j]
        })
        .collect();
    let hidden: Vec<f64> = pre_hidden.iter().map(|&v| v.max(0.0)).collect();
    let mut logits = [0.0; OUT];
    for (k, z) in logits.iter_mut().enumerate() {
        let row = &a.w2[k * h..(k + 1) * h];
        *z = row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + a.b2[k];
    }
    let probs = ScoreVector(logits.map(sigmoid));
    Activations { pre_hidden, hidden, logits, probs }
}

/// Resizes to the model's input side when needed, then runs the network.
pub fn forward(params: &RefModelParams, img: &GrayImage) -> Result<Activations> {
    let x = params.input_vector(img)?;
    Ok(forward_vec(params, &x))
}

pub fn predict(params: &RefModelParams, img: &GrayImage) -> Result<ScoreVector> {
    Ok(forward(params, img)?.probs)
}

/// Label-averaged `max(z,0) - z y + ln(1 + e^{-|z|})`.
pub fn bce_with_logits(logits: &[f64; OUT], y: &[bool; OUT]) -> f64 {
    logits.iter().zip(y).map(|(&z, &t)| z.max(0.0) - if t { z } else { 0.0 } + (-z.abs()).exp().ln_1p()).sum::<f64>()
        / OUT as f64
}

/// Adds the gradient of the loss at one sample into `grads` (scaled by
/// `weight`) and returns that sample's loss.
pub fn accumulate_gradients(
    params: &RefModelParams,
    x: &[f64],
    y: &[bool; OUT],
    weight: f64,
    grads: &mut ParamArrays,
) -> f64 {
    let d = params.input_dim();
    let h = params.hidden_units;
    let act = forward_vec(params, x);
    let loss = bce_with_logits(&act.logits, y);

    // dL/dz_k = (sigmoid(z_k) - y_k) / 5
    let dz: [f64; OUT] = std::array::from_fn(|k| weight * (act.probs.0[k] - y[k] as u8 as f64) / OUT as f64);
    let w2 = &params.arrays.w2;
    let mut d_hidden = vec![0.0; h];
    for k in 0..OUT {
        grads.b2[k] += dz[k];
        let g_row = &mut grads.w2[k * h..(k + 1) * h];
        let w_row = &w2[k * h..(k + 1) * h];
        for j in 0..h {
            g_row[j] += dz[k] * act.hidden[j];
            d_hidden[j] += w_row[j] * dz[k];
        }
    }
    for (j, &da) in d_hidden.iter().enumerate() {
        // relu'(0) = 0
        if act.pre_hidden[j] <= 0.0 {
            continue;
        }
        grads.b1[j] += da;
        let g_row = &mut grads.w1[j * d..(j + 1) * d];
        for (g, v) in g_row.iter_mut().zip(x) {
            *g += da * v;
        }
    }
    loss
}

/// Exact gradient of `bce_with_logits ∘ forward` for one image.
pub fn gradients(params: &RefModelParams, img: &GrayImage, y: &[bool; OUT]) -> Result<ParamArrays> {
    let x = params.input_vector(img)?;
    let mut g = ParamArrays::zeros_like(&params.arrays);
    accumulate_gradients(params, &x, y, 1.0, &mut g);
    Ok(g)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> ModelConfig {
        ModelConfig { input_side: 3, hidden_units: 4 }
    }

    #[test]
    fn zero_params_give_half() {
        let p = RefModelParams::zeros(&tiny());
        let img = GrayImage::filled(3, 3, 0.7).unwrap();
        let a = forward(&p, &img).unwrap();
        assert_eq!(a.logits, [0.0; 5]);
        assert_eq!(a.probs.0, [0.5; 5]);
    }

    #[test]
    fn inactive_hidden_layer_ignores_input_scale() {
        let mut p = RefModelParams::init(&tiny(), 3);
        p.arrays.w1.iter_mut().for_each(|w| *w = -w.abs());
        p.arrays.b2.fill(0.0);
        for v in [0.0, 0.3, 1.0] {
            let a = forward(&p, &GrayImage::filled(3, 3, v).unwrap()).unwrap();
            assert_eq!(a.probs.0, [0.5; 5]);
        }
    }

    #[test]
    fn forward_resizes_input() {
        let p = RefModelParams::init(&tiny(), 1);
        let big = GrayImage::filled(12, 12, 0.4).unwrap();
        let small = GrayImage::filled(3, 3, 0.4).unwrap();
        assert_eq!(forward(&p, &big).unwrap(), forward(&p, &small).unwrap());
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_with_logits(&[0.0; 5], &[true, false, true, false, true]) - ln2).abs() < 1e-15);
        assert!(bce_with_logits(&[40.0; 5], &[true; 5]) < 1e-16);
        let v = bce_with_logits(&[-40.0; 5], &[true; 5]);
        assert!((v - 40.0).abs() < 1e-12, "{v}");
        assert!(bce_with_logits(&[1e308, -1e308, 0.0, 0.0, 0.0], &[false; 5]).is_finite());
    }

    #[test]
    fn zero_case_gradients() {
        let p = RefModelParams::zeros(&tiny());
        let img = GrayImage::filled(3, 3, 0.0).unwrap();
        let y = [true, false, true, true, false];
        let g = gradients(&p, &img, &y).unwrap();
        for (k, &yk) in y.iter().enumerate() {
            assert_eq!(g.b2[k], (0.5 - yk as u8 as f64) / 5.0);
        }
        assert!(g.w1.iter().chain(&g.b1).chain(&g.w2).all(|&v| v == 0.0));
    }

    #[test]
    fn stationary_when_target_equals_prediction() {
        // zero hidden layer, logits come from b2 only; y = sigmoid(z) needs
        // y in {0,1}, so saturate the biases
        let mut p = RefModelParams::zeros(&tiny());
        p.arrays.b2 = vec![800.0, -800.0, 800.0, -800.0, 800.0];
        let y = [true, false, true, false, true];
        let g = gradients(&p, &GrayImage::filled(3, 3, 0.5).unwrap(), &y).unwrap();
        assert!(g.b2.iter().chain(&g.w2).all(|&v| v == 0.0));
    }

    #[test]
    fn param_file_round_trip() {
        let p = RefModelParams::init(&tiny(), 11);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"CXRM");
        assert_eq!(bytes.len(), 16 + 8 * (4 * 9 + 4 + 5 * 4 + 5));
        assert_eq!(RefModelParams::from_bytes(&bytes).unwrap(), p);
        assert!(RefModelParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(RefModelParams::from_bytes(&v2), Err(Error::UnsupportedFormat(_))));
    }

    /// Reference loss in the textbook log-probability form.
    fn naive_bce(z: &[f64; 5], y: &[bool; 5]) -> f64 {
        z.iter()
            .zip(y)
            .map(|(&z, &t)| {
                let p = 1.0 / (1.0 + (-z).exp());
                if t {
                    -p.ln()
                } else {
                    -(1.0 - p).ln()
                }
            })
            .sum::<f64>()
            / 5.0
    }

    proptest! {
        #[test]
        fn stable_form_matches_textbook(z in prop::array::uniform5(-12.0f64..12.0), y in prop::array::uniform5(any::<bool>())) {
            prop_assert!((bce_with_logits(&z, &y) - naive_bce(&z, &y)).abs() < 1e-9);
        }

        #[test]
        fn probabilities_strictly_inside(seed in any::<u64>(), v in 0.0f64..=1.0) {
            let p = RefModelParams::init(&tiny(), seed);
            let a = forward(&p, &GrayImage::filled(3, 3, v).unwrap()).unwrap();
            prop_assert!(a.probs.0.iter().all(|&q| q > 0.0 && q < 1.0));
        }
    }
}
