//! Binary portable graymap (P5, maxval 255) reading and writing.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sensing::ImageRaster;

/// Encodes a raster as P5. Values are rounded and clamped to `[0, 255]`.
pub fn encode(image: &ImageRaster) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.values().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    out
}

pub fn decode(bytes: &[u8]) -> Result<ImageRaster> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos, "magic")?;
    if magic != "P5" {
        return Err(Error::parse("magic", 0, format!("expected P5, found `{magic}`")));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval_at = pos;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::parse("maxval", maxval_at, format!("only maxval 255 is supported, found {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    let body = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::parse("raster", pos, format!("expected {need} pixel bytes, found {}", bytes.len().saturating_sub(pos)))
    })?;
    ImageRaster::new(width, height, body.iter().map(|&b| b as f64).collect())
}

pub fn write_file(path: impl AsRef<Path>, image: &ImageRaster) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(image))?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<ImageRaster> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize, field: &'static str) -> Result<&'a str> {
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
        return Err(Error::parse(field, start, "unexpected end of header"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::parse(field, start, "header is not ASCII"))
}

fn header_number(bytes: &[u8], pos: &mut usize, field: &'static str) -> Result<usize> {
    let start = *pos;
    let tok = header_token(bytes, pos, field)?;
    match tok.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(Error::parse(field, start, format!("`{tok}` is not a positive integer"))),
    }
}
