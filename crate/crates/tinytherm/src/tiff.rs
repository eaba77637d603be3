//! Thermal frames as 16-bit grayscale TIFF.
//!
//! Files are written by hand in one fixed layout (see `docs/formats.md`):
//! little-endian, one IFD with ten entries, one uncompressed strip holding
//! `°C × 100` as `u16`. Reading goes through the `tiff` crate, so any valid
//! single-channel 16-bit unsigned TIFF is accepted.

use std::io::Cursor;
use std::path::Path;

use tiff::decoder::{Decoder, DecodingResult};
use tiff::ColorType;
use tinytherm_core::{ThermalFrame, FRAME_HEIGHT, FRAME_WIDTH};

use crate::error::{Error, Result};

const TAG_COUNT: u16 = 10;
/// Header (8) + entry count (2) + entries (12 each) + next-IFD offset (4).
pub const PIXEL_OFFSET: u32 = 8 + 2 + 12 * TAG_COUNT as u32 + 4;

const SHORT: u16 = 3;
const LONG: u16 = 4;

/// Encode a `width × height` grid of raw counts, row-major.
pub fn encode_raw(width: usize, height: usize, raw: &[u16]) -> Result<Vec<u8>> {
    if raw.len() != width * height || width == 0 || height == 0 {
        return Err(tinytherm_core::Error::Dimension(format!("{} samples for a {width}x{height} image", raw.len())).into());
    }
    let (w, h) = (u32::try_from(width), u32::try_from(height));
    let (Ok(w), Ok(h)) = (w, h) else {
        return Err(Error::Format("image too large for TIFF".into()));
    };
    let strip_bytes = 2 * w * h;
    let mut out = Vec::with_capacity(PIXEL_OFFSET as usize + strip_bytes as usize);
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&8u32.to_le_bytes());
    out.extend_from_slice(&TAG_COUNT.to_le_bytes());
    let entries: [(u16, u16, u32); TAG_COUNT as usize] = [
        (256, LONG, w),                // ImageWidth
        (257, LONG, h),                // ImageLength
        (258, SHORT, 16),              // BitsPerSample
        (259, SHORT, 1),               // Compression: none
        (262, SHORT, 1),               // PhotometricInterpretation: BlackIsZero
        (273, LONG, PIXEL_OFFSET),     // StripOffsets
        (277, SHORT, 1),               // SamplesPerPixel
        (278, LONG, h),                // RowsPerStrip
        (279, LONG, strip_bytes),      // StripByteCounts
        (339, SHORT, 1),               // SampleFormat: unsigned
    ];
    for (tag, ty, value) in entries {
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&ty.to_le_bytes());
        out.extend_from_slice(&1u32.to_le_bytes());
        // Values shorter than 4 bytes are left-justified in the field.
        if ty == SHORT {
            out.extend_from_slice(&(value as u16).to_le_bytes());
            out.extend_from_slice(&[0, 0]);
        } else {
            out.extend_from_slice(&value.to_le_bytes());
        }
    }
    out.extend_from_slice(&0u32.to_le_bytes());
    debug_assert_eq!(out.len(), PIXEL_OFFSET as usize);
    for v in raw {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decode any single-channel 16-bit unsigned TIFF into `(width, height, raw)`.
pub fn decode_raw(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let fmt = |e: tiff::TiffError| Error::Format(format!("TIFF: {e}"));
    let mut dec = Decoder::new(Cursor::new(bytes)).map_err(fmt)?;
    let color = dec.colortype().map_err(fmt)?;
    if color != ColorType::Gray(16) {
        return Err(Error::Format(format!("expected 16-bit grayscale, found {color:?}")));
    }
    let (w, h) = dec.dimensions().map_err(fmt)?;
    match dec.read_image().map_err(fmt)? {
        DecodingResult::U16(data) => Ok((w as usize, h as usize, data)),
        _ => Err(Error::Format("expected unsigned 16-bit samples".into())),
    }
}

pub fn encode_frame(frame: &ThermalFrame) -> Result<Vec<u8>> {
    encode_raw(frame.width, frame.height, &frame.to_raw())
}

/// Decode a sensor frame; anything but 32×24 is a dimension error.
pub fn decode_frame(bytes: &[u8], index: u64) -> Result<ThermalFrame> {
    let (w, h, raw) = decode_raw(bytes)?;
    if (w, h) != (FRAME_WIDTH, FRAME_HEIGHT) {
        return Err(tinytherm_core::Error::Dimension(format!("frame is {w}x{h}, expected {FRAME_WIDTH}x{FRAME_HEIGHT}")).into());
    }
    Ok(ThermalFrame::from_raw(w, h, &raw, index)?)
}

pub fn read_frame(path: &Path, index: u64) -> Result<ThermalFrame> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_frame(&bytes, index).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_frame(path: &Path, frame: &ThermalFrame) -> Result<()> {
    std::fs::write(path, encode_frame(frame)?).map_err(|e| Error::io(path, e))
}
