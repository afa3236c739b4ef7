//! Binary P6 PPM reading and writing.
//!
//! Pixels become [0,1] reals on ingest; export clamps to [0,1] and rounds
//! back to 8-bit.  Only maxval 255 is supported.

use std::path::Path;

use crate::tensor::FeatureCuboid;
use crate::{Error, Result};

/// Skips whitespace and `#` comments, then reads one ASCII token.
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
        return Err(Error::input("truncated image header"));
    }
    Ok(&bytes[start..*pos])
}

fn parse_count(token: &[u8]) -> Result<usize> {
    let s = std::str::from_utf8(token).map_err(|_| Error::input("non-ASCII header token"))?;
    s.parse::<usize>().map_err(|_| Error::input(format!("bad header number {s:?}")))
}

/// Parses a binary P6 image into a 3-channel cuboid with [0,1] values.
pub fn parse_ppm(bytes: &[u8]) -> Result<FeatureCuboid> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != b"P6" {
        return Err(Error::input("not a binary P6 image"));
    }
    let width = parse_count(next_token(bytes, &mut pos)?)?;
    let height = parse_count(next_token(bytes, &mut pos)?)?;
    let maxval = parse_count(next_token(bytes, &mut pos)?)?;
    if maxval != 255 {
        return Err(Error::input(format!("unsupported maxval {maxval}, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(Error::input("image has zero area"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::input("missing pixel data separator"));
    }
    pos += 1;
    let pixel_count = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::input("image dimensions overflow"))?;
    let data = &bytes[pos..];
    if data.len() < pixel_count {
        return Err(Error::input(format!(
            "pixel data has {} bytes, {}x{} needs {pixel_count}",
            data.len(),
            width,
            height
        )));
    }
    let mut img = FeatureCuboid::zeros(3, height, width);
    for y in 0..height {
        for x in 0..width {
            let base = (y * width + x) * 3;
            for c in 0..3 {
                img.set(c, y, x, data[base + c] as f64 / 255.0);
            }
        }
    }
    Ok(img)
}

/// Renders a 3-channel cuboid as binary P6, clamping to [0,1] and rounding.
pub fn render_ppm(img: &FeatureCuboid) -> Result<Vec<u8>> {
    if img.channels() != 3 {
        return Err(Error::input(format!("expected a 3-channel image, got {}", img.channels())));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (img.get(c, y, x).clamp(0.0, 1.0) * 255.0).round();
                out.push(v as u8);
            }
        }
    }
    Ok(out)
}

pub fn read_ppm_file(path: impl AsRef<Path>) -> Result<FeatureCuboid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes)
}

pub fn write_ppm_file(path: impl AsRef<Path>, img: &FeatureCuboid) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_ppm(img)?).map_err(|e| Error::io(path, e))
}
