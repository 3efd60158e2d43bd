//! Grayscale raster type, codecs, geometric transforms and training-time
//! augmentation.
//!
//! Every intensity lives in `[0, 1]`; all operations here are pure and keep
//! that invariant.

mod augment;
mod codec;

pub use augment::{augment, sample_augmentation, AugmentationConfig, AugmentationSample};
pub(crate) use codec::encode_gray8_raw as codec_encode_gray8;
pub use codec::{decode_image, encode_png_gray8};

use crate::error::{Error, Result};

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("image dimensions must be positive, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::arg(format!("pixel buffer has {} entries, expected {}", pixels.len(), width * height)));
        }
        if let Some((i, v)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("pixel {i} has intensity {v} outside [0, 1]")));
        }
        Ok(GrayImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage::new(width, height, pixels)
    }

    /// Caller guarantees the invariants; values are clamped into `[0, 1]`.
    pub(crate) fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        GrayImage { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }
}

/// Bilinear resize with half-pixel-centered sampling and edge clamping.
pub fn resize(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::arg(format!("resize target must be positive, got {width}x{height}")));
    }
    if width == img.width && height == img.height {
        return Ok(img.clone());
    }
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    let axis = |dst: usize, scale: f64, src_len: usize| {
        let c = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, c - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, sx, img.width)).collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, img.height);
        for &(x0, x1, fx) in &cols {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Ok(GrayImage::from_clamped(width, height, out))
}

pub fn horizontal_flip(img: &GrayImage) -> GrayImage {
    let mut out = img.pixels.clone();
    for row in out.chunks_mut(img.width) {
        row.reverse();
    }
    GrayImage { width: img.width, height: img.height, pixels: out }
}

/// Rotates about the image center by `degrees` (positive is counterclockwise
/// as displayed, with y pointing down). Bilinear sampling; samples falling
/// outside the source contribute 0.
pub fn rotate(img: &GrayImage, degrees: f64) -> GrayImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let w = img.width as isize;
    let h = img.height as isize;
    let fetch = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w || y >= h {
            0.0
        } else {
            img.get(x as usize, y as usize)
        }
    };
    let mut out = Vec::with_capacity(img.pixels.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let src_x = cos * dx - sin * dy + cx;
            let src_y = sin * dx + cos * dy + cy;
            let x0 = src_x.floor();
            let y0 = src_y.floor();
            let fx = src_x - x0;
            let fy = src_y - y0;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let top = fetch(x0, y0) * (1.0 - fx) + fetch(x0 + 1, y0) * fx;
            let bottom = fetch(x0, y0 + 1) * (1.0 - fx) + fetch(x0 + 1, y0 + 1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    GrayImage::from_clamped(img.width, img.height, out)
}

/// Multiplies every pixel by `factor` and clamps to `[0, 1]`. The factor
/// must lie within `1 ± max_fraction`.
pub fn perturb_intensity(img: &GrayImage, factor: f64, max_fraction: f64) -> Result<GrayImage> {
    const SLACK: f64 = 1e-12;
    if !factor.is_finite() || factor < 1.0 - max_fraction - SLACK || factor > 1.0 + max_fraction + SLACK {
        return Err(Error::arg(format!(
            "intensity factor {factor} outside [{}, {}]",
            1.0 - max_fraction,
            1.0 + max_fraction
        )));
    }
    let pixels = img.pixels.iter().map(|p| p * factor).collect();
    Ok(GrayImage::from_clamped(img.width, img.height, pixels))
}
