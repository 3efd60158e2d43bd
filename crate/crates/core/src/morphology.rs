//! Binary lung-mask post-processing: Euclidean disk structuring elements,
//! erosion and dilation, the refined/tight/loose expansion and mask
//! application.
//!
//! Pixels outside the raster count as background for both operations, so
//! erosion shrinks masks that touch the border and dilation is clipped.

use crate::error::{Error, Result};
use crate::imaging::{self, GrayImage};

pub const DEFAULT_ERODE_RADIUS: usize = 5;
pub const DEFAULT_TIGHT_RADIUS: usize = 15;
pub const DEFAULT_LOOSE_RADIUS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("mask dimensions must be positive, got {width}x{height}")));
        }
        if bits.len() != width * height {
            return Err(Error::arg(format!("mask buffer has {} entries, expected {}", bits.len(), width * height)));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        BinaryMask::new(width, height, vec![false; width * height])
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        BinaryMask::new(width, height, vec![true; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Set inclusion of foreground pixels. Masks of different shape are never
    /// subsets of each other.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_shape(other) && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask { width: self.width, height: self.height, bits: self.bits.iter().map(|b| !b).collect() }
    }

    /// Reads a mask image; any nonzero sample is foreground.
    pub fn decode(bytes: &[u8]) -> Result<BinaryMask> {
        let img = imaging::decode_image(bytes)?;
        let bits = img.pixels().iter().map(|&p| p > 0.0).collect();
        BinaryMask::new(img.width(), img.height(), bits)
    }

    /// 8-bit grayscale PNG with 0 for background and 255 for foreground.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let data: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        imaging::codec_encode_gray8(self.width, self.height, &data)
    }

    fn check_shape(&self, width: usize, height: usize) -> Result<()> {
        if self.width != width || self.height != height {
            return Err(Error::DimensionMismatch {
                expected_width: width,
                expected_height: height,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }
}

/// Euclidean disk: every integer offset with `dx² + dy² ≤ r²`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiskSE {
    radius: usize,
    offsets: Vec<(i64, i64)>,
    /// Per row offset `dy`, the disk covers `dx ∈ [-half, half]`.
    rows: Vec<(i64, i64)>,
}

pub fn disk_se(radius: usize) -> DiskSE {
    let r = radius as i64;
    let mut offsets = Vec::new();
    let mut rows = Vec::with_capacity(2 * radius + 1);
    for dy in -r..=r {
        let mut half = 0;
        while (half + 1) * (half + 1) + dy * dy <= r * r {
            half += 1;
        }
        rows.push((dy, half));
        offsets.extend((-half..=half).map(|dx| (dx, dy)));
    }
    DiskSE { radius, offsets, rows }
}

impl DiskSE {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn offsets(&self) -> &[(i64, i64)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Per-row prefix counts: `prefix[y * (w + 1) + x]` is the number of
/// foreground pixels in row `y` left of column `x`.
fn row_prefix(mask: &BinaryMask) -> Vec<u32> {
    let w = mask.width;
    let mut prefix = vec![0u32; (w + 1) * mask.height];
    for (y, row) in mask.bits.chunks(w).enumerate() {
        let p = &mut prefix[y * (w + 1)..(y + 1) * (w + 1)];
        for (x, &b) in row.iter().enumerate() {
            p[x + 1] = p[x] + b as u32;
        }
    }
    prefix
}

/// Output pixel is foreground iff every disk offset lands on a foreground
/// pixel inside the raster.
pub fn erode(mask: &BinaryMask, se: &DiskSE) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let prefix = row_prefix(mask);
    let mut bits = vec![false; mask.bits.len()];
    for y in 0..h {
        for x in 0..w {
            bits[(y * w + x) as usize] = se.rows.iter().all(|&(dy, half)| {
                let yy = y + dy;
                let (lo, hi) = (x - half, x + half);
                if yy < 0 || yy >= h || lo < 0 || hi >= w {
                    return false;
                }
                let base = (yy * (w + 1)) as usize;
                let n = prefix[base + hi as usize + 1] - prefix[base + lo as usize];
                n as i64 == hi - lo + 1
            });
        }
    }
    BinaryMask { width: mask.width, height: mask.height, bits }
}

/// Output pixel is foreground iff some disk offset lands on a foreground
/// pixel; offsets outside the raster are ignored.
pub fn dilate(mask: &BinaryMask, se: &DiskSE) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let prefix = row_prefix(mask);
    let mut bits = vec![false; mask.bits.len()];
    for y in 0..h {
        for x in 0..w {
            bits[(y * w + x) as usize] = se.rows.iter().any(|&(dy, half)| {
                let yy = y + dy;
                if yy < 0 || yy >= h {
                    return false;
                }
                let lo = (x - half).max(0) as usize;
                let hi = (x + half).min(w - 1) as usize;
                let base = (yy * (w + 1)) as usize;
                prefix[base + hi + 1] > prefix[base + lo]
            });
        }
    }
    BinaryMask { width: mask.width, height: mask.height, bits }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskVariants {
    /// Raw mask after erosion.
    pub refined: BinaryMask,
    /// Refined mask dilated by the small radius (M-15 by default).
    pub tight: BinaryMask,
    /// Refined mask dilated by the large radius (M-50 by default).
    pub loose: BinaryMask,
}

/// Erodes once, then dilates the eroded mask independently by each radius.
pub fn expand_mask(raw: &BinaryMask, erode_radius: usize, dilate_radii: (usize, usize)) -> MaskVariants {
    let refined = erode(raw, &disk_se(erode_radius));
    let tight = dilate(&refined, &disk_se(dilate_radii.0));
    let loose = dilate(&refined, &disk_se(dilate_radii.1));
    MaskVariants { refined, tight, loose }
}

/// Keeps pixels under the mask and zeroes the rest.
pub fn apply_mask(img: &GrayImage, mask: &BinaryMask) -> Result<GrayImage> {
    mask.check_shape(img.width(), img.height())?;
    let pixels = img.pixels().iter().zip(&mask.bits).map(|(&p, &keep)| if keep { p } else { 0.0 }).collect();
    GrayImage::new(img.width(), img.height(), pixels)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct evaluation over the offset list, independent of the row-run
    /// implementation.
    pub(crate) fn naive(mask: &BinaryMask, se: &DiskSE, erosion: bool) -> BinaryMask {
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let hit = |&(dx, dy): &(i64, i64)| {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as usize, yy as usize)
            };
            if erosion {
                se.offsets().iter().all(hit)
            } else {
                se.offsets().iter().any(hit)
            }
        })
        .unwrap()
    }

    #[test]
    fn disk_sizes() {
        assert_eq!(disk_se(0).offsets(), &[(0, 0)]);
        assert_eq!(disk_se(1).len(), 5);
        assert_eq!(disk_se(2).len(), 13);
        for r in 0..8 {
            let se = disk_se(r);
            let ri = r as i64;
            let brute = (-ri..=ri)
                .flat_map(|dy| (-ri..=ri).map(move |dx| (dx, dy)))
                .filter(|(dx, dy)| dx * dx + dy * dy <= ri * ri)
                .count();
            assert_eq!(se.len(), brute);
            assert!(se.offsets().contains(&(0, 0)));
            for &(dx, dy) in se.offsets() {
                assert!(se.offsets().contains(&(-dx, -dy)));
            }
        }
    }

    #[test]
    fn erode_examples() {
        let empty = BinaryMask::empty(6, 6).unwrap();
        assert_eq!(erode(&empty, &disk_se(2)), empty);
        let m = BinaryMask::from_fn(5, 4, |x, y| (x * y) % 3 == 1).unwrap();
        assert_eq!(erode(&m, &disk_se(0)), m);

        let full = BinaryMask::full(5, 5).unwrap();
        let e = erode(&full, &disk_se(1));
        assert_eq!(e.count(), 9);
        for y in 0..5 {
            for x in 0..5 {
                assert_eq!(e.get(x, y), (1..4).contains(&x) && (1..4).contains(&y));
            }
        }
    }

    #[test]
    fn dilate_examples() {
        let empty = BinaryMask::empty(6, 6).unwrap();
        assert_eq!(dilate(&empty, &disk_se(3)), empty);
        let m = BinaryMask::from_fn(5, 4, |x, y| (x + y) % 4 == 0).unwrap();
        assert_eq!(dilate(&m, &disk_se(0)), m);

        let mut dot = BinaryMask::empty(7, 7).unwrap();
        dot.set(3, 3, true);
        let d = dilate(&dot, &disk_se(1));
        assert_eq!(d.count(), 5);
        for (x, y) in [(3, 3), (2, 3), (4, 3), (3, 2), (3, 4)] {
            assert!(d.get(x, y));
        }
    }

    #[test]
    fn expand_examples() {
        let empty = BinaryMask::empty(40, 40).unwrap();
        let v = expand_mask(&empty, 5, (15, 50));
        assert_eq!(v.loose.count(), 0);

        let mut dot = BinaryMask::empty(40, 40).unwrap();
        dot.set(20, 20, true);
        let v = expand_mask(&dot, 5, (15, 50));
        assert_eq!((v.refined.count(), v.tight.count(), v.loose.count()), (0, 0, 0));
    }

    #[test]
    fn expand_ring_width_along_flat_edge() {
        // 60-px square in a 200x200 canvas: refined edge moves in by 5,
        // tight edge lands 10 px out, loose edge 45 px out.
        let raw = BinaryMask::from_fn(200, 200, |x, y| (70..130).contains(&x) && (70..130).contains(&y)).unwrap();
        let v = expand_mask(&raw, 5, (15, 50));
        assert!(v.refined.is_subset_of(&v.tight) && v.tight.is_subset_of(&v.loose));
        assert_eq!(v.refined, naive(&raw, &disk_se(5), true));
        let row = 100;
        let extent = |m: &BinaryMask| (0..200).filter(|&x| m.get(x, row)).max().unwrap();
        assert_eq!(extent(&v.refined), 124);
        assert_eq!(extent(&v.tight), 139);
        assert_eq!(extent(&v.loose), 174);
        assert_eq!(extent(&v.loose) - extent(&v.tight), 35);
    }

    #[test]
    fn apply_mask_examples() {
        let img = GrayImage::filled(4, 2, 0.6).unwrap();
        assert_eq!(apply_mask(&img, &BinaryMask::full(4, 2).unwrap()).unwrap(), img);
        let none = apply_mask(&img, &BinaryMask::empty(4, 2).unwrap()).unwrap();
        assert!(none.pixels().iter().all(|&p| p == 0.0));
        let half = BinaryMask::from_fn(4, 2, |x, _| x < 2).unwrap();
        let out = apply_mask(&img, &half).unwrap();
        assert_eq!(out.pixels(), &[0.6, 0.6, 0.0, 0.0, 0.6, 0.6, 0.0, 0.0]);
        assert!(matches!(apply_mask(&img, &BinaryMask::full(2, 4).unwrap()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn png_round_trip() {
        let m = BinaryMask::from_fn(9, 5, |x, y| x > y).unwrap();
        assert_eq!(BinaryMask::decode(&m.encode_png().unwrap()).unwrap(), m);
    }

    fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            prop::collection::vec(any::<bool>(), w * h).prop_map(move |b| BinaryMask::new(w, h, b).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_naive_oracle(m in arb_mask(6), r in 0usize..3) {
            let se = disk_se(r);
            prop_assert_eq!(erode(&m, &se), naive(&m, &se, true));
            prop_assert_eq!(dilate(&m, &se), naive(&m, &se, false));
        }

        #[test]
        fn duality_on_padded_interior(m in arb_mask(6), r in 0usize..3) {
            // pad with a background border wider than the radius, then compare
            // on the original footprint
            let pad = r + 1;
            let (w, h) = (m.width() + 2 * pad, m.height() + 2 * pad);
            let padded = BinaryMask::from_fn(w, h, |x, y| {
                x >= pad && y >= pad && x < pad + m.width() && y < pad + m.height() && m.get(x - pad, y - pad)
            }).unwrap();
            let se = disk_se(r);
            let lhs = erode(&padded, &se);
            let rhs = dilate(&padded.complement(), &se).complement();
            for y in pad..pad + m.height() {
                for x in pad..pad + m.width() {
                    prop_assert_eq!(lhs.get(x, y), rhs.get(x, y));
                }
            }
        }

        #[test]
        fn monotone_and_extensive(m in arb_mask(8), extra in prop::collection::vec(any::<bool>(), 64), r in 0usize..4) {
            let bigger = BinaryMask::from_fn(m.width(), m.height(), |x, y| m.get(x, y) || extra[(y * 8 + x) % 64]).unwrap();
            let se = disk_se(r);
            prop_assert!(erode(&m, &se).is_subset_of(&erode(&bigger, &se)));
            prop_assert!(dilate(&m, &se).is_subset_of(&dilate(&bigger, &se)));
            prop_assert!(m.is_subset_of(&dilate(&m, &se)));
            prop_assert!(erode(&m, &se).is_subset_of(&m));
            prop_assert!(dilate(&m, &disk_se(r)).is_subset_of(&dilate(&m, &disk_se(r + 2))));
        }
    }
}
