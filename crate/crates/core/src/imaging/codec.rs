//! PNG and BMP decoding to [`GrayImage`], and 8-bit grayscale PNG encoding.
//!
//! Alpha is discarded, color is collapsed with BT.601 luma weights, and
//! samples are scaled by the container's maximum sample value.

use std::io::Cursor;

use super::GrayImage;
use crate::error::{Error, Result};

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn decode_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode { offset, message: message.into() }
}

/// Decodes a PNG or BMP file into a grayscale image.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"BM") {
        decode_bmp(bytes)
    } else {
        Err(decode_err(0, "unrecognized file signature (expected PNG or BMP)"))
    }
}

/// Combines one pixel's color samples into a single intensity. Identical
/// channels pass through unchanged so gray data stored as RGB is exact.
fn luma(r: u32, g: u32, b: u32, max: f64) -> f64 {
    if r == g && g == b {
        return r as f64 / max;
    }
    (LUMA[0] * r as f64 + LUMA[1] * g as f64 + LUMA[2] * b as f64) / max
}

struct PngLayout {
    color_type: u8,
    bit_depth: u8,
    first_idat: usize,
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Walks the chunk list so structural damage is reported with its offset
/// before the pixel decoder runs.
fn scan_png(bytes: &[u8]) -> Result<PngLayout> {
    let mut pos = PNG_SIGNATURE.len();
    let mut header: Option<(u8, u8)> = None;
    let mut first_idat = None;
    loop {
        if pos + 8 > bytes.len() {
            return Err(decode_err(pos, "truncated chunk header (missing IEND)"));
        }
        let len = be_u32(bytes, pos) as usize;
        let kind = &bytes[pos + 4..pos + 8];
        if !kind.iter().all(u8::is_ascii_alphabetic) {
            return Err(decode_err(pos + 4, "invalid chunk type"));
        }
        let end =
            pos.checked_add(12).and_then(|p| p.checked_add(len)).filter(|&e| e <= bytes.len()).ok_or_else(|| {
                decode_err(
                    pos,
                    format!(
                        "chunk {} declares {len} data bytes but the file ends first",
                        String::from_utf8_lossy(kind)
                    ),
                )
            })?;
        match kind {
            b"IHDR" => {
                if len != 13 {
                    return Err(decode_err(pos, "IHDR chunk must be 13 bytes"));
                }
                let data = pos + 8;
                if be_u32(bytes, data) == 0 || be_u32(bytes, data + 4) == 0 {
                    return Err(decode_err(data, "zero image dimension"));
                }
                header = Some((bytes[data + 8], bytes[data + 9]));
            }
            _ if header.is_none() => {
                return Err(decode_err(pos, "first chunk is not IHDR"));
            }
            b"IDAT" if first_idat.is_none() => first_idat = Some(pos),
            b"IEND" => break,
            _ => {}
        }
        pos = end;
    }
    let (bit_depth, color_type) = header.expect("IHDR checked in loop");
    let first_idat = first_idat.ok_or_else(|| decode_err(pos, "no IDAT chunk before IEND"))?;
    let depth_at = PNG_SIGNATURE.len() + 16;
    match (color_type, bit_depth) {
        (0 | 2 | 4 | 6, 8 | 16) => {}
        (0, 1 | 2 | 4) => {
            return Err(Error::UnsupportedFormat(format!(
                "{bit_depth}-bit grayscale PNG (only 8- and 16-bit are supported)"
            )))
        }
        (3, _) => {
            return Err(Error::UnsupportedFormat("palette PNG".into()));
        }
        _ => {
            return Err(decode_err(depth_at, format!("invalid PNG color type {color_type} with bit depth {bit_depth}")))
        }
    }
    Ok(PngLayout { color_type, bit_depth, first_idat })
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let layout = scan_png(bytes)?;
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| decode_err(PNG_SIGNATURE.len(), e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| decode_err(PNG_SIGNATURE.len(), "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| decode_err(layout.first_idat, e.to_string()))?;
    let width = info.width as usize;
    let height = info.height as usize;
    let channels = match layout.color_type {
        0 => 1,
        2 => 3,
        4 => 2,
        _ => 4,
    };
    let wide = layout.bit_depth == 16;
    let max = if wide { 65535.0 } else { 255.0 };
    let sample = |row: &[u8], i: usize| -> u32 {
        if wide {
            u16::from_be_bytes([row[2 * i], row[2 * i + 1]]) as u32
        } else {
            row[i] as u32
        }
    };
    let mut pixels = Vec::with_capacity(width * height);
    for row in buf.chunks(info.line_size).take(height) {
        for x in 0..width {
            let base = x * channels;
            let v = match channels {
                1 | 2 => sample(row, base) as f64 / max,
                _ => luma(sample(row, base), sample(row, base + 1), sample(row, base + 2), max),
            };
            pixels.push(v);
        }
    }
    Ok(GrayImage::from_clamped(width, height, pixels))
}

fn le_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn le_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn decode_bmp(bytes: &[u8]) -> Result<GrayImage> {
    const FILE_HEADER: usize = 14;
    if bytes.len() < FILE_HEADER + 4 {
        return Err(decode_err(bytes.len(), "truncated BMP file header"));
    }
    let data_offset = le_u32(bytes, 10) as usize;
    let dib_size = le_u32(bytes, FILE_HEADER) as usize;
    if dib_size < 40 {
        return Err(Error::UnsupportedFormat(format!("BMP info header of {dib_size} bytes")));
    }
    if bytes.len() < FILE_HEADER + dib_size {
        return Err(decode_err(bytes.len(), "truncated BMP info header"));
    }
    let raw_w = le_u32(bytes, 18) as i32;
    let raw_h = le_u32(bytes, 22) as i32;
    let bpp = le_u16(bytes, 28);
    let compression = le_u32(bytes, 30);
    let colors_used = le_u32(bytes, 46) as usize;
    if raw_w <= 0 || raw_h == 0 {
        return Err(decode_err(18, format!("invalid BMP dimensions {raw_w}x{raw_h}")));
    }
    if compression != 0 {
        return Err(Error::UnsupportedFormat(format!("BMP compression method {compression}")));
    }
    if !matches!(bpp, 8 | 24 | 32) {
        return Err(Error::UnsupportedFormat(format!("{bpp}-bit BMP")));
    }
    let width = raw_w as usize;
    let height = raw_h.unsigned_abs() as usize;
    let top_down = raw_h < 0;

    let palette: Vec<f64> = if bpp == 8 {
        let count = if colors_used == 0 { 256 } else { colors_used.min(256) };
        let start = FILE_HEADER + dib_size;
        if start + 4 * count > bytes.len() {
            return Err(decode_err(start, "palette extends past end of file"));
        }
        (0..count)
            .map(|i| {
                let p = start + 4 * i;
                luma(bytes[p + 2] as u32, bytes[p + 1] as u32, bytes[p] as u32, 255.0)
            })
            .collect()
    } else {
        Vec::new()
    };

    let stride = (bpp as usize * width).div_ceil(32) * 4;
    let needed =
        data_offset.checked_add(stride * height).ok_or_else(|| decode_err(10, "pixel data offset overflows"))?;
    if needed > bytes.len() {
        return Err(decode_err(
            bytes.len(),
            format!("pixel data needs {needed} bytes but the file has {}", bytes.len()),
        ));
    }
    let mut pixels = vec![0.0; width * height];
    for file_row in 0..height {
        let y = if top_down { file_row } else { height - 1 - file_row };
        let row_at = data_offset + file_row * stride;
        for x in 0..width {
            let v = match bpp {
                8 => {
                    let at = row_at + x;
                    let idx = bytes[at] as usize;
                    *palette.get(idx).ok_or_else(|| decode_err(at, format!("palette index {idx} out of range")))?
                }
                _ => {
                    let at = row_at + x * (bpp as usize / 8);
                    luma(bytes[at + 2] as u32, bytes[at + 1] as u32, bytes[at] as u32, 255.0)
                }
            };
            pixels[y * width + x] = v;
        }
    }
    Ok(GrayImage::from_clamped(width, height, pixels))
}

/// Encodes as an 8-bit grayscale PNG, quantizing by `round(v * 255)`.
pub fn encode_png_gray8(img: &GrayImage) -> Result<Vec<u8>> {
    let data: Vec<u8> = img.pixels().iter().map(|&p| (p * 255.0).round() as u8).collect();
    encode_gray8_raw(img.width(), img.height(), &data)
}

pub(crate) fn encode_gray8_raw(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width as u32, height as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| Error::Internal(format!("png encode: {e}")))?;
        writer.write_image_data(data).map_err(|e| Error::Internal(format!("png encode: {e}")))?;
    }
    Ok(out)
}
