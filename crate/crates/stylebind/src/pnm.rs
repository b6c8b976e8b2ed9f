//! Binary PPM (P6) images and PGM (P5) grayscale maps, maxval 255.

use std::path::Path;

use stylebind_core::Image;

use crate::error::{CliError, Result};

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = header("P6", 32, 32);
    out.extend(img.to_rgb8());
    out
}

/// Grayscale map with values in `[0, 1]`, row-major.
pub fn encode_pgm(values: &[f64], w: usize, h: usize) -> Vec<u8> {
    let mut out = header("P5", w, h);
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Parses a P5/P6 header; returns `(width, height, data offset)`.
fn parse_header(buf: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if buf.len() < 2 || &buf[..2] != magic {
        return Err(CliError::format(0, format!("expected {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match buf.get(pos) {
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&c| c != b'\n') {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(CliError::format(pos, "truncated header")),
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&buf[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::format(start, "expected a decimal header field"))?;
    }
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(CliError::format(pos, "expected whitespace after maxval"));
    }
    if fields[2] != 255 {
        return Err(CliError::format(pos, format!("maxval {} unsupported, expected 255", fields[2])));
    }
    Ok((fields[0], fields[1], pos + 1))
}

pub fn decode_ppm(buf: &[u8]) -> Result<Image> {
    let (w, h, off) = parse_header(buf, b"P6")?;
    if (w, h) != (32, 32) {
        return Err(CliError::format(3, format!("image is {w}x{h}, expected 32x32")));
    }
    let data = &buf[off..];
    if data.len() != 32 * 32 * 3 {
        return Err(CliError::format(off, format!("expected {} pixel bytes, found {}", 32 * 32 * 3, data.len())));
    }
    Ok(Image::from_rgb8(data)?)
}

/// Returns `(values in [0, 1], width, height)`.
pub fn decode_pgm(buf: &[u8]) -> Result<(Vec<f64>, usize, usize)> {
    let (w, h, off) = parse_header(buf, b"P5")?;
    let data = &buf[off..];
    if data.len() != w * h {
        return Err(CliError::format(off, format!("expected {} pixel bytes, found {}", w * h, data.len())));
    }
    Ok((data.iter().map(|&b| f64::from(b) / 255.0).collect(), w, h))
}

pub fn write_ppm(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode_ppm(img)).map_err(|e| CliError::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let buf = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_ppm(&buf).map_err(|e| e.in_file(path))
}

pub fn write_pgm(path: &Path, values: &[f64], w: usize, h: usize) -> Result<()> {
    std::fs::write(path, encode_pgm(values, w, h)).map_err(|e| CliError::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let buf = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_pgm(&buf).map_err(|e| e.in_file(path))
}
