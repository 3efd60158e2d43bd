//! Planted-signal synthetic chest images for smoke tests.
//!
//! Each image has a dark lung field on a bright background. Every
//! abnormality owns a fixed location inside the lungs and is marked by a
//! bright blob there, so labels are recoverable from pixels alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{encode_png_gray8, GrayImage};
use crate::labels::{LabelVector, ABNORMALITIES, NUM_ABNORMALITIES};
use crate::model::{scores_csv, ScoreVector};
use crate::rng::Stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_images: usize,
    pub side: usize,
    pub seed: u64,
    /// Probability that an image carries no abnormality.
    pub no_finding_fraction: f64,
    /// Per-abnormality probability for images that are not normal.
    pub label_probability: f64,
    /// Half-width of uniform pixel noise.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_images: 500,
            side: 32,
            seed: 0,
            no_finding_fraction: 0.3,
            label_probability: 0.35,
            noise: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub image_id: String,
    pub labels: LabelVector,
    pub image: GrayImage,
}

const BACKGROUND: f64 = 0.8;
const LUNG: f64 = 0.2;
const BLOB: f64 = 0.95;

/// Blob centres per abnormality, as fractions of the side. Every layout is
/// mirror-symmetric so horizontal flips preserve the label.
const BLOB_CENTRES: [&[(f64, f64)]; NUM_ABNORMALITIES] =
    [&[(0.28, 0.28), (0.72, 0.28)], &[(0.28, 0.72), (0.72, 0.72)], &[(0.50, 0.22)], &[(0.50, 0.78)], &[(0.50, 0.50)]];

fn lung_bounds(side: usize) -> (f64, f64) {
    (0.1 * side as f64, 0.9 * side as f64)
}

pub fn image_id(i: usize) -> String {
    format!("synth_{i:05}.png")
}

fn render(side: usize, flags: &[bool; NUM_ABNORMALITIES], noise: f64, s: &mut Stream) -> Result<GrayImage> {
    let (lo, hi) = lung_bounds(side);
    let radius = (side as f64 * 0.09).max(1.5);
    let jitter: Vec<f64> = (0..side * side).map(|_| s.uniform(-noise, noise)).collect();
    GrayImage::from_fn(side, side, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        let inside = (lo..hi).contains(&fx) && (lo..hi).contains(&fy);
        let mut v = if inside { LUNG } else { BACKGROUND };
        for (k, centres) in BLOB_CENTRES.iter().enumerate() {
            for &(cx, cy) in centres.iter() {
                let (dx, dy) = (fx - cx * side as f64, fy - cy * side as f64);
                if flags[k] && dx * dx + dy * dy <= radius * radius {
                    v = BLOB;
                }
            }
        }
        (v + jitter[y * side + x]).clamp(0.0, 1.0)
    })
}

/// Deterministic in `cfg`.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<SyntheticImage>> {
    if cfg.side < 8 {
        return Err(Error::arg("synthetic side must be at least 8"));
    }
    if !(0.0..1.0).contains(&cfg.no_finding_fraction) || !(0.0..=1.0).contains(&cfg.label_probability) {
        return Err(Error::arg("synthetic probabilities must lie in [0, 1)"));
    }
    (0..cfg.n_images)
        .map(|i| {
            let mut s = Stream::new(cfg.seed, i as u64);
            let mut flags = [false; NUM_ABNORMALITIES];
            if s.next_f64() >= cfg.no_finding_fraction {
                for f in flags.iter_mut() {
                    *f = s.next_f64() < cfg.label_probability;
                }
                if !flags.iter().any(|&f| f) {
                    flags[s.below(NUM_ABNORMALITIES as u64) as usize] = true;
                }
            }
            Ok(SyntheticImage {
                image_id: image_id(i),
                labels: LabelVector::from_abnormalities(flags),
                image: render(cfg.side, &flags, cfg.noise, &mut s)?,
            })
        })
        .collect()
}

/// Manifest CSV in the `Image Index,Finding Labels` layout.
pub fn manifest_csv(images: &[SyntheticImage]) -> String {
    let mut out = String::from("Image Index,Finding Labels\n");
    for img in images {
        let names: Vec<&str> = if img.labels.no_finding() {
            vec!["No Finding"]
        } else {
            ABNORMALITIES.iter().filter(|l| img.labels.get(**l)).map(|l| l.name()).collect()
        };
        out.push_str(&format!("{},{}\n", img.image_id, names.join("|")));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPaths {
    pub manifest: PathBuf,
    pub image_dir: PathBuf,
}

/// Writes `manifest.csv` and `images/<id>` under `dir`.
pub fn write_dataset(cfg: &SyntheticConfig, dir: &Path) -> Result<SyntheticPaths> {
    let images = generate(cfg)?;
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    for img in &images {
        let path = image_dir.join(&img.image_id);
        fs::write(&path, encode_png_gray8(&img.image)?).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = dir.join("manifest.csv");
    fs::write(&manifest, manifest_csv(&images)).map_err(|e| Error::io(&manifest, e))?;
    Ok(SyntheticPaths { manifest, image_dir })
}

/// Classifier-like scores: positives centred at `0.5 + separation / 2`,
/// negatives at `0.5 - separation / 2`, with uniform noise of half-width 0.5.
pub fn planted_scores(labels: &[(String, LabelVector)], separation: f64, seed: u64) -> Vec<(String, ScoreVector)> {
    labels
        .iter()
        .enumerate()
        .map(|(i, (id, l))| {
            let mut s = Stream::new(seed, i as u64);
            let p = std::array::from_fn(|k| {
                let centre = if l.get(ABNORMALITIES[k]) { 0.5 + separation / 2.0 } else { 0.5 - separation / 2.0 };
                (centre + s.uniform(-0.5, 0.5)).clamp(0.0, 1.0)
            });
            (id.clone(), ScoreVector(p))
        })
        .collect()
}

pub fn planted_scores_csv(rows: &[(String, ScoreVector)]) -> String {
    scores_csv(rows.iter().map(|(id, s)| (id.as_str(), s)))
}
