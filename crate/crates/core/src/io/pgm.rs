use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::Field;

/// Decodes a binary (P5) PGM with 8- or 16-bit samples into `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Field> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(Error::UnsupportedFormat(format!(
            "expected binary PGM (P5), found `{}`",
            String::from_utf8_lossy(magic)
        )));
    }
    let width = parse_header_number(bytes, &mut pos, "width")?;
    let height = parse_header_number(bytes, &mut pos, "height")?;
    let maxval = parse_header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::UnsupportedFormat("PGM with zero dimension".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedFormat(format!(
            "PGM maxval {maxval} out of range"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let need = width * height * sample_bytes;
    let raster = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::UnsupportedFormat(format!("PGM raster truncated: need {need} bytes"))
    })?;
    let scale = 1.0 / maxval as f64;
    let data = if sample_bytes == 1 {
        raster.iter().map(|&b| f64::from(b) * scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) * scale)
            .collect()
    };
    Field::from_vec(height, width, data)
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::UnsupportedFormat("truncated PGM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::UnsupportedFormat(format!("bad PGM {what}")))
}

pub fn read_pgm(path: &Path) -> Result<Field> {
    decode_pgm(&fs::read(path)?)
}

/// Rounds `[0, 1]` values to 8-bit levels.
pub fn quantize(field: &Field) -> Vec<u8> {
    field
        .as_slice()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn encode_pgm8(field: &Field) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", field.width(), field.height()).into_bytes();
    out.extend(quantize(field));
    out
}

pub fn write_pgm8(path: &Path, field: &Field) -> Result<()> {
    super::write_atomic(path, &encode_pgm8(field))?;
    Ok(())
}
