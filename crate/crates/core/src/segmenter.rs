//! Lung-mask providers. Externally produced masks are ingested from files;
//! a threshold-in-box fallback lets the pipeline run without a foundation
//! model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::morphology::BinaryMask;
use crate::rng::Stream;

pub const DEFAULT_FALLBACK_THRESHOLD: f64 = 0.4;
pub const MASK_SUFFIX: &str = ".mask.png";

/// Inclusive pixel rectangle; `x0 < x1` and `y0 < y1` inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoxPrompt {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize, width: usize, height: usize) -> Result<Self> {
        let b = BoxPrompt { x0, y0, x1, y1 };
        if !b.is_valid(width, height) {
            return Err(Error::arg(format!("box ({x0},{y0})-({x1},{y1}) invalid for a {width}x{height} image")));
        }
        Ok(b)
    }

    pub fn is_valid(&self, width: usize, height: usize) -> bool {
        self.x0 < self.x1 && self.x1 < width && self.y0 < self.y1 && self.y1 < height
    }

    /// Box inset from every border by `margin` of the image extent.
    pub fn inset(width: usize, height: usize, margin: f64) -> Result<Self> {
        let mx = (width as f64 * margin).floor() as usize;
        let my = (height as f64 * margin).floor() as usize;
        BoxPrompt::new(mx, my, width.saturating_sub(1 + mx), height.saturating_sub(1 + my), width, height)
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

fn jitter_span(lo: usize, hi: usize, extent: usize, max_shift: i64, s: &mut Stream) -> (usize, usize) {
    let shift_lo = s.int_inclusive(-max_shift, max_shift);
    let shift_hi = s.int_inclusive(-max_shift, max_shift);
    let new_lo = (lo as i64 + shift_lo).clamp(0, extent as i64 - 2);
    let new_hi = (hi as i64 + shift_hi).clamp(new_lo + 1, extent as i64 - 1);
    (new_lo as usize, new_hi as usize)
}

/// Shifts each edge by an independent integer in `[-max_shift, max_shift]`,
/// then clamps so the box stays valid. Deterministic in `(seed, draw_index)`.
pub fn jitter_box(
    b: &BoxPrompt,
    max_shift: usize,
    width: usize,
    height: usize,
    seed: u64,
    draw_index: u64,
) -> Result<BoxPrompt> {
    if !b.is_valid(width, height) {
        return Err(Error::arg("box is not valid for the image"));
    }
    let mut s = Stream::new(seed, draw_index);
    let m = max_shift as i64;
    let (x0, x1) = jitter_span(b.x0, b.x1, width, m, &mut s);
    let (y0, y1) = jitter_span(b.y0, b.y1, height, m, &mut s);
    Ok(BoxPrompt { x0, y0, x1, y1 })
}

/// Decodes a mask file and checks it matches the image it belongs to.
pub fn load_mask(bytes: &[u8], expected_width: usize, expected_height: usize, source: &str) -> Result<BinaryMask> {
    let mask = BinaryMask::decode(bytes)
        .map_err(|e| Error::Ingestion { source_name: source.to_string(), message: e.to_string() })?;
    if mask.width() != expected_width || mask.height() != expected_height {
        return Err(Error::Ingestion {
            source_name: source.to_string(),
            message: format!(
                "mask is {}x{} but the image is {expected_width}x{expected_height}",
                mask.width(),
                mask.height()
            ),
        });
    }
    Ok(mask)
}

/// `<dir>/<image_id>.mask.png`
pub fn mask_path(dir: &Path, image_id: &str) -> PathBuf {
    dir.join(format!("{image_id}{MASK_SUFFIX}"))
}

/// Foreground where the pixel is inside the box and darker than
/// `threshold`.
pub fn fallback_segment(img: &GrayImage, b: &BoxPrompt, threshold: f64) -> Result<BinaryMask> {
    if !b.is_valid(img.width(), img.height()) {
        return Err(Error::arg("box is not valid for the image"));
    }
    BinaryMask::from_fn(img.width(), img.height(), |x, y| b.contains(x, y) && img.get(x, y) < threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_zero_is_identity() {
        let b = BoxPrompt::new(3, 4, 10, 12, 20, 20).unwrap();
        for i in 0..20 {
            assert_eq!(jitter_box(&b, 0, 20, 20, 1, i).unwrap(), b);
        }
    }

    #[test]
    fn jitter_corner_box_stays_valid() {
        let corners = [
            BoxPrompt::new(0, 0, 1, 1, 16, 16).unwrap(),
            BoxPrompt::new(14, 14, 15, 15, 16, 16).unwrap(),
            BoxPrompt::new(0, 14, 15, 15, 16, 16).unwrap(),
        ];
        for b in corners {
            for i in 0..500 {
                let j = jitter_box(&b, 9, 16, 16, 7, i).unwrap();
                assert!(j.is_valid(16, 16), "{j:?}");
            }
        }
    }

    #[test]
    fn jitter_edges_within_shift() {
        let b = BoxPrompt::new(30, 30, 70, 70, 100, 100).unwrap();
        let mut moved = false;
        for i in 0..10_000 {
            let j = jitter_box(&b, 5, 100, 100, 3, i).unwrap();
            for (new, old) in [(j.x0, b.x0), (j.y0, b.y0), (j.x1, b.x1), (j.y1, b.y1)] {
                assert!(new.abs_diff(old) <= 5);
            }
            moved |= j != b;
        }
        assert!(moved);
        assert_eq!(jitter_box(&b, 5, 100, 100, 3, 77).unwrap(), jitter_box(&b, 5, 100, 100, 3, 77).unwrap());
    }

    #[test]
    fn load_mask_rules() {
        let m = BinaryMask::from_fn(3, 2, |x, _| x == 1).unwrap();
        let data: Vec<u8> = vec![0, 128, 255, 0, 1, 0];
        let png = crate::imaging::codec_encode_gray8(3, 2, &data).unwrap();
        let loaded = load_mask(&png, 3, 2, "a.mask.png").unwrap();
        assert_eq!(loaded.bits(), &[false, true, true, false, true, false]);
        assert_eq!(load_mask(&m.encode_png().unwrap(), 3, 2, "b").unwrap(), m);

        let full = crate::imaging::codec_encode_gray8(3, 2, &[255; 6]).unwrap();
        assert_eq!(load_mask(&full, 3, 2, "f").unwrap().count(), 6);
        let empty = crate::imaging::codec_encode_gray8(3, 2, &[0; 6]).unwrap();
        assert_eq!(load_mask(&empty, 3, 2, "e").unwrap().count(), 0);

        match load_mask(&full, 4, 2, "x.mask.png") {
            Err(Error::Ingestion { source_name, .. }) => assert_eq!(source_name, "x.mask.png"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fallback_examples() {
        let img = GrayImage::from_fn(12, 12, |x, y| if (4..8).contains(&x) && (3..9).contains(&y) { 0.1 } else { 0.8 })
            .unwrap();
        let b = BoxPrompt::new(1, 1, 10, 10, 12, 12).unwrap();
        assert_eq!(fallback_segment(&img, &b, 0.0).unwrap().count(), 0);
        let all = fallback_segment(&img, &b, 1.5).unwrap();
        assert_eq!(all.count(), 100);
        let dark = fallback_segment(&img, &b, 0.4).unwrap();
        let expected = BinaryMask::from_fn(12, 12, |x, y| (4..8).contains(&x) && (3..9).contains(&y)).unwrap();
        assert_eq!(dark, expected);
        let inside = BinaryMask::from_fn(12, 12, |x, y| b.contains(x, y)).unwrap();
        assert!(dark.is_subset_of(&inside));
    }
}
