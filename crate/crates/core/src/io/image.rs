//! 8-bit PNG (gray or RGB) and binary PGM/PPM images.
//!
//! Loading scales samples to [0, 1]; saving quantizes with round-half-up,
//! so a save -> load round trip is exact to within 1/510.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::image::ImageBuffer;

use super::quantize_u8;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    /// Binary PGM (`P5`) for one channel, PPM (`P6`) for three.
    Pnm,
}

impl ImageFormat {
    /// From a path extension: `png`, `pgm`, `ppm` or `pnm`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        match ext.as_deref() {
            Some("png") => Ok(Self::Png),
            Some("pgm" | "ppm" | "pnm") => Ok(Self::Pnm),
            _ => Err(Error::invalid(format!(
                "{}: image extension must be .png, .pgm or .ppm",
                path.display()
            ))),
        }
    }
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer, FormatError> {
    if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
        Err(FormatError::Unsupported(format!(
            "netpbm variant P{} (only binary P5/P6 are supported)",
            bytes[1] as char
        )))
    } else {
        Err(FormatError::Unsupported("not a PNG, PGM or PPM file".into()))
    }
}

fn decode_png(bytes: &[u8]) -> Result<ImageBuffer, FormatError> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| FormatError::InvalidData(format!("PNG: {e}")))?;
    let info = reader.info();
    let (color, depth) = (info.color_type, info.bit_depth);
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(FormatError::Unsupported(format!(
                "PNG color type {other:?} (only 8-bit grayscale and RGB)"
            )))
        }
    };
    if depth != png::BitDepth::Eight {
        return Err(FormatError::Unsupported(format!(
            "PNG bit depth {} (only 8-bit)",
            depth as u8
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FormatError::InvalidData("PNG dimensions overflow".into()))?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| FormatError::InvalidData(format!("PNG: {e}")))?;
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut data = Vec::with_capacity(w * h * channels);
    for row in buf.chunks(frame.line_size).take(h) {
        data.extend(row[..w * channels].iter().map(|&v| v as f64 / 255.0));
    }
    ImageBuffer::from_vec(w, h, channels, data).map_err(|e| FormatError::InvalidData(e.to_string()))
}

/// Splits the netpbm header into its four whitespace-separated tokens,
/// skipping `#` comments, and returns them with the raster offset.
fn pnm_header(bytes: &[u8]) -> Result<([usize; 3], usize), FormatError> {
    let mut tokens = Vec::new();
    let mut i = 2;
    while tokens.len() < 3 {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(FormatError::InvalidData("malformed netpbm header".into()));
        }
        let text = std::str::from_utf8(&bytes[start..i]).unwrap();
        tokens.push(
            text.parse::<usize>()
                .map_err(|_| FormatError::InvalidData(format!("bad header number {text}")))?,
        );
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(FormatError::InvalidData("missing whitespace after maxval".into()));
    }
    Ok(([tokens[0], tokens[1], tokens[2]], i + 1))
}

fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer, FormatError> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let ([w, h, maxval], offset) = pnm_header(bytes)?;
    if maxval == 0 || maxval > 255 {
        return Err(FormatError::Unsupported(format!(
            "netpbm maxval {maxval} (only 8-bit, maxval 1..=255)"
        )));
    }
    let need = w
        .checked_mul(h)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| FormatError::InvalidData("image dimensions overflow".into()))?;
    let raster = &bytes[offset..];
    if raster.len() < need {
        return Err(FormatError::Truncated {
            expected: (offset + need) as u64,
            actual: bytes.len() as u64,
        });
    }
    let scale = maxval as f64;
    let data = raster[..need].iter().map(|&v| (v as f64 / scale).min(1.0)).collect();
    ImageBuffer::from_vec(w, h, channels, data).map_err(|e| FormatError::InvalidData(e.to_string()))
}

pub fn encode_image(image: &ImageBuffer, format: ImageFormat) -> Result<Vec<u8>> {
    if image.is_empty() {
        return Err(Error::invalid("cannot encode an empty image"));
    }
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize_u8(v)).collect();
    match format {
        ImageFormat::Png => {
            let mut out = Vec::new();
            let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
            enc.set_color(if image.channels() == 1 {
                png::ColorType::Grayscale
            } else {
                png::ColorType::Rgb
            });
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
            writer
                .finish()
                .map_err(|e| Error::invalid(format!("PNG encoding failed: {e}")))?;
            Ok(out)
        }
        ImageFormat::Pnm => {
            let magic = if image.channels() == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
            out.extend_from_slice(&bytes);
            Ok(out)
        }
    }
}

pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let bytes = super::read_file(path)?;
    Ok(decode_image(&bytes)?)
}

/// Format chosen by extension (see [`ImageFormat::from_path`]).
pub fn save_image(image: &ImageBuffer, path: &Path) -> Result<()> {
    let bytes = encode_image(image, ImageFormat::from_path(path)?)?;
    super::atomic_write(path, &bytes)
}
