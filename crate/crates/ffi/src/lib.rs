//! C ABI over the `cxrseg` core.
//!
//! Images and masks cross the boundary as opaque handles that the caller
//! frees with the matching `*_free` function. Every fallible call returns a
//! [`CxrStatus`]; on failure the message is available from
//! [`cxr_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cxrseg::metrics::{auroc, select_threshold_f1};
use cxrseg::model::{no_finding_score, ScoreVector};
use cxrseg::morphology::{apply_mask, expand_mask};
use cxrseg::segloss::{dice_loss, pixel_bce_loss, ProbMask};
use cxrseg::stats::{mantel_test, paired_t_test, SquareMatrix};
use cxrseg::{BinaryMask, Error, GrayImage, NUM_ABNORMALITIES};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CxrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Decode = 3,
    UnsupportedFormat = 4,
    DimensionMismatch = 5,
    UndefinedMetric = 6,
    UndefinedCorrelation = 7,
    Format = 8,
    Io = 9,
    Internal = 10,
    Panic = 11,
}

/// Grayscale image with intensities in [0, 1].
pub struct CxrImage(GrayImage);

/// Binary raster mask.
pub struct CxrMask(BinaryMask);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CxrPairedTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub significant: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CxrMantel {
    pub rho: f64,
    pub p_value: f64,
    pub permutation_count: usize,
    pub exhaustive: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn status_of(e: &Error) -> CxrStatus {
    match e {
        Error::Decode { .. } => CxrStatus::Decode,
        Error::UnsupportedFormat(_) => CxrStatus::UnsupportedFormat,
        Error::Argument(_) | Error::Config(_) | Error::Curation { .. } => CxrStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => CxrStatus::DimensionMismatch,
        Error::UndefinedMetric { .. } => CxrStatus::UndefinedMetric,
        Error::UndefinedCorrelation(_) => CxrStatus::UndefinedCorrelation,
        Error::Format(_) | Error::Ingestion { .. } => CxrStatus::Format,
        Error::MissingPath(_) | Error::Io { .. } => CxrStatus::Io,
        _ => CxrStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CxrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CxrStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            CxrStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("panic inside cxrseg".into());
            CxrStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

fn bools(bytes: &[u8]) -> Vec<bool> {
    bytes.iter().map(|&b| b != 0).collect()
}

fn check_len(expected: usize, got: usize, what: &str) -> Result<(), Failure> {
    if expected != got {
        return Err(Error::Argument(format!("{what}: expected {expected} values, got {got}")).into());
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cxr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Decodes PNG or BMP bytes to a grayscale image.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_image_decode(bytes: *const u8, len: usize, out_image: *mut *mut CxrImage) -> CxrStatus {
    guard(|| {
        let o = out(out_image, "out_image")?;
        let img = cxrseg::imaging::decode_image(slice(bytes, len, "bytes")?)?;
        *o = Box::into_raw(Box::new(CxrImage(img)));
        Ok(())
    })
}

/// Builds an image from `width * height` row-major intensities in [0, 1].
///
/// # Safety
/// `pixels` must point to `width * height` doubles; `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_image_from_pixels(
    width: usize,
    height: usize,
    pixels: *const f64,
    out_image: *mut *mut CxrImage,
) -> CxrStatus {
    guard(|| {
        let o = out(out_image, "out_image")?;
        let n = width.checked_mul(height).ok_or_else(|| Error::Argument("image too large".into()))?;
        let img = GrayImage::new(width, height, slice(pixels, n, "pixels")?.to_vec())?;
        *o = Box::into_raw(Box::new(CxrImage(img)));
        Ok(())
    })
}

/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cxr_image_width(image: *const CxrImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.width())
}

/// # Safety
/// `image` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cxr_image_height(image: *const CxrImage) -> usize {
    image.as_ref().map_or(0, |i| i.0.height())
}

/// Copies the row-major intensities into `dst`, which must hold exactly
/// `width * height` doubles.
///
/// # Safety
/// `image` must be a live handle and `dst` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cxr_image_pixels(image: *const CxrImage, dst: *mut f64, len: usize) -> CxrStatus {
    guard(|| {
        let img = &handle(image, "image")?.0;
        check_len(img.pixels().len(), len, "pixel buffer")?;
        slice_mut(dst, len, "dst")?.copy_from_slice(img.pixels());
        Ok(())
    })
}

/// Encodes as 8-bit grayscale PNG. Free the buffer with [`cxr_bytes_free`].
///
/// # Safety
/// `image` must be a live handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_image_encode_png(
    image: *const CxrImage,
    out_bytes: *mut *mut u8,
    out_len: *mut usize,
) -> CxrStatus {
    guard(|| {
        let img = &handle(image, "image")?.0;
        let (ob, ol) = (out(out_bytes, "out_bytes")?, out(out_len, "out_len")?);
        let bytes = cxrseg::imaging::encode_png_gray8(img)?.into_boxed_slice();
        *ol = bytes.len();
        *ob = Box::into_raw(bytes).cast::<u8>();
        Ok(())
    })
}

/// # Safety
/// `bytes` and `len` must come from one call to [`cxr_image_encode_png`] or
/// [`cxr_mask_encode_png`], and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cxr_bytes_free(bytes: *mut u8, len: usize) {
    if !bytes.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(bytes, len)));
    }
}

/// # Safety
/// `image` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cxr_image_free(image: *mut CxrImage) {
    if !image.is_null() {
        drop(Box::from_raw(image));
    }
}

/// Decodes a mask PNG; every nonzero pixel is foreground.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out_mask` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_decode(bytes: *const u8, len: usize, out_mask: *mut *mut CxrMask) -> CxrStatus {
    guard(|| {
        let o = out(out_mask, "out_mask")?;
        let m = BinaryMask::decode(slice(bytes, len, "bytes")?)?;
        *o = Box::into_raw(Box::new(CxrMask(m)));
        Ok(())
    })
}

/// Builds a mask from `width * height` row-major bytes; nonzero is foreground.
///
/// # Safety
/// `bits` must point to `width * height` bytes; `out_mask` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_from_bits(
    width: usize,
    height: usize,
    bits: *const u8,
    out_mask: *mut *mut CxrMask,
) -> CxrStatus {
    guard(|| {
        let o = out(out_mask, "out_mask")?;
        let n = width.checked_mul(height).ok_or_else(|| Error::Argument("mask too large".into()))?;
        let m = BinaryMask::new(width, height, bools(slice(bits, n, "bits")?))?;
        *o = Box::into_raw(Box::new(CxrMask(m)));
        Ok(())
    })
}

/// # Safety
/// `mask` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_width(mask: *const CxrMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.width())
}

/// # Safety
/// `mask` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_height(mask: *const CxrMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.height())
}

/// Number of foreground pixels.
///
/// # Safety
/// `mask` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_count(mask: *const CxrMask) -> usize {
    mask.as_ref().map_or(0, |m| m.0.count())
}

/// Writes 0/1 bytes into `dst`, which must hold `width * height` bytes.
///
/// # Safety
/// `mask` must be a live handle and `dst` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_bits(mask: *const CxrMask, dst: *mut u8, len: usize) -> CxrStatus {
    guard(|| {
        let m = &handle(mask, "mask")?.0;
        check_len(m.bits().len(), len, "mask buffer")?;
        for (d, &b) in slice_mut(dst, len, "dst")?.iter_mut().zip(m.bits()) {
            *d = b as u8;
        }
        Ok(())
    })
}

/// Encodes as a 0/255 grayscale PNG. Free the buffer with [`cxr_bytes_free`].
///
/// # Safety
/// `mask` must be a live handle; both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_encode_png(
    mask: *const CxrMask,
    out_bytes: *mut *mut u8,
    out_len: *mut usize,
) -> CxrStatus {
    guard(|| {
        let m = &handle(mask, "mask")?.0;
        let (ob, ol) = (out(out_bytes, "out_bytes")?, out(out_len, "out_len")?);
        let bytes = m.encode_png()?.into_boxed_slice();
        *ol = bytes.len();
        *ob = Box::into_raw(bytes).cast::<u8>();
        Ok(())
    })
}

/// # Safety
/// `mask` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_free(mask: *mut CxrMask) {
    if !mask.is_null() {
        drop(Box::from_raw(mask));
    }
}

/// Erodes `raw` by a disk of `erode_radius`, then dilates the result by
/// `tight_radius` and `loose_radius`. Any out pointer may be NULL to skip
/// that variant.
///
/// # Safety
/// `raw` must be a live handle; non-NULL out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_expand(
    raw: *const CxrMask,
    erode_radius: usize,
    tight_radius: usize,
    loose_radius: usize,
    out_refined: *mut *mut CxrMask,
    out_tight: *mut *mut CxrMask,
    out_loose: *mut *mut CxrMask,
) -> CxrStatus {
    guard(|| {
        let m = &handle(raw, "raw")?.0;
        let v = expand_mask(m, erode_radius, (tight_radius, loose_radius));
        for (dst, mask) in [(out_refined, v.refined), (out_tight, v.tight), (out_loose, v.loose)] {
            if let Some(d) = dst.as_mut() {
                *d = Box::into_raw(Box::new(CxrMask(mask)));
            }
        }
        Ok(())
    })
}

/// Zeroes every pixel outside the mask.
///
/// # Safety
/// `image` and `mask` must be live handles; `out_image` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_mask_apply(
    image: *const CxrImage,
    mask: *const CxrMask,
    out_image: *mut *mut CxrImage,
) -> CxrStatus {
    guard(|| {
        let o = out(out_image, "out_image")?;
        let img = apply_mask(&handle(image, "image")?.0, &handle(mask, "mask")?.0)?;
        *o = Box::into_raw(Box::new(CxrImage(img)));
        Ok(())
    })
}

/// Dice loss between two masks of equal shape.
///
/// # Safety
/// `a` and `b` must be live handles; `out_loss` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_dice_loss(a: *const CxrMask, b: *const CxrMask, out_loss: *mut f64) -> CxrStatus {
    guard(|| {
        let o = out(out_loss, "out_loss")?;
        *o = dice_loss(&handle(a, "a")?.0, &handle(b, "b")?.0)?;
        Ok(())
    })
}

/// Mean pixel BCE of probabilities (row-major, same shape as `truth`).
///
/// # Safety
/// `probs` must point to `len` doubles, `truth` must be a live handle and
/// `out_loss` writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_pixel_bce_loss(
    probs: *const f64,
    len: usize,
    truth: *const CxrMask,
    epsilon: f64,
    out_loss: *mut f64,
) -> CxrStatus {
    guard(|| {
        let o = out(out_loss, "out_loss")?;
        let gt = &handle(truth, "truth")?.0;
        let pred = ProbMask::new(gt.width(), gt.height(), slice(probs, len, "probs")?.to_vec())?;
        *o = pixel_bce_loss(&pred, gt, epsilon)?;
        Ok(())
    })
}

/// Rank-based AUROC; `labels` are 0/1 bytes.
///
/// # Safety
/// `scores` and `labels` must each point to `n` elements; `out_auroc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_auroc(scores: *const f64, labels: *const u8, n: usize, out_auroc: *mut f64) -> CxrStatus {
    guard(|| {
        let o = out(out_auroc, "out_auroc")?;
        *o = auroc(slice(scores, n, "scores")?, &bools(slice(labels, n, "labels")?))?;
        Ok(())
    })
}

/// F1-maximizing threshold over the observed scores (predict positive when
/// score >= threshold).
///
/// # Safety
/// `scores` and `labels` must each point to `n` elements; out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_select_threshold_f1(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out_threshold: *mut f64,
    out_f1: *mut f64,
) -> CxrStatus {
    guard(|| {
        let (ot, of) = (out(out_threshold, "out_threshold")?, out(out_f1, "out_f1")?);
        let c = select_threshold_f1(slice(scores, n, "scores")?, &bools(slice(labels, n, "labels")?))?;
        *ot = c.threshold;
        *of = c.f1;
        Ok(())
    })
}

/// `1 - max` over five abnormality probabilities.
///
/// # Safety
/// `probs` must point to five doubles; `out_score` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_no_finding_score(probs: *const f64, out_score: *mut f64) -> CxrStatus {
    guard(|| {
        let o = out(out_score, "out_score")?;
        let p: [f64; NUM_ABNORMALITIES] =
            slice(probs, NUM_ABNORMALITIES, "probs")?.try_into().expect("length fixed above");
        *o = no_finding_score(&ScoreVector::new(p)?);
        Ok(())
    })
}

/// Two-sided paired t-test on `x - y`.
///
/// # Safety
/// `x` and `y` must each point to `n` doubles; `out_result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_paired_t_test(
    x: *const f64,
    y: *const f64,
    n: usize,
    alpha: f64,
    out_result: *mut CxrPairedTest,
) -> CxrStatus {
    guard(|| {
        let o = out(out_result, "out_result")?;
        let r = paired_t_test(slice(x, n, "x")?, slice(y, n, "y")?, alpha)?;
        *o = CxrPairedTest {
            t_statistic: r.t_statistic,
            degrees_of_freedom: r.degrees_of_freedom,
            p_value: r.p_value,
            significant: r.significant,
        };
        Ok(())
    })
}

/// One-sided Mantel test between two symmetric `k x k` row-major matrices.
///
/// # Safety
/// `a` and `b` must each point to `k * k` doubles; `out_result` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cxr_mantel_test(
    a: *const f64,
    b: *const f64,
    k: usize,
    permutations: usize,
    seed: u64,
    out_result: *mut CxrMantel,
) -> CxrStatus {
    guard(|| {
        let o = out(out_result, "out_result")?;
        let n = k.checked_mul(k).ok_or_else(|| Error::Argument("matrix too large".into()))?;
        let ma = SquareMatrix::new(k, slice(a, n, "a")?.to_vec())?;
        let mb = SquareMatrix::new(k, slice(b, n, "b")?.to_vec())?;
        let r = mantel_test(&ma, &mb, permutations, seed)?;
        *o = CxrMantel {
            rho: r.rho,
            p_value: r.p_value,
            permutation_count: r.permutation_count,
            exhaustive: r.exhaustive,
        };
        Ok(())
    })
}
