//! Decoder for binary PPM (P6) images, the input format of the CLI.

use std::fs;
use std::io;
use std::path::Path;

use crate::tensor::{Shape, Tensor};

/// Errors decoding a PPM file.
#[derive(Debug, thiserror::Error)]
pub enum PpmError {
    #[error("not a binary PPM: magic is not \"P6\"")]
    BadMagic,
    #[error("malformed header: {0}")]
    BadHeader(&'static str),
    #[error("only maxval 255 is supported, got {0}")]
    UnsupportedMaxval(u32),
    #[error("pixel data ends early: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Decode P6 bytes into a `1 x 3 x H x W` tensor with values in `[0, 255]`.
///
/// Header tokens may be separated by any whitespace; `#` comments run to
/// the end of the line, as the format allows.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor, PpmError> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    pos += 2;
    let w = read_header_int(bytes, &mut pos)? as usize;
    let h = read_header_int(bytes, &mut pos)? as usize;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates the header from the pixels.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::BadHeader("missing separator before pixel data")),
    }
    if w == 0 || h == 0 {
        return Err(PpmError::BadHeader("zero width or height"));
    }
    let expected = w * h * 3;
    let pixels = &bytes[pos..];
    if pixels.len() < expected {
        return Err(PpmError::Truncated { expected, found: pixels.len() });
    }
    // Interleaved RGB rows -> channel planes.
    let shape = Shape::new(1, 3, h, w).map_err(|_| PpmError::BadHeader("image too large"))?;
    let mut data = vec![0.0f32; shape.numel()];
    for y in 0..h {
        for x in 0..w {
            let px = (y * w + x) * 3;
            for ch in 0..3 {
                data[(ch * h + y) * w + x] = pixels[px + ch] as f32;
            }
        }
    }
    Ok(Tensor::new(shape, data).expect("sized to shape"))
}

/// Read a PPM file from disk.
pub fn read_ppm<P: AsRef<Path>>(path: P) -> Result<Tensor, PpmError> {
    decode_ppm(&fs::read(path)?)
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<u32, PpmError> {
    // Skip whitespace and comments.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(PpmError::BadHeader("unexpected end of header")),
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        return Err(PpmError::BadHeader("expected a decimal number"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or(PpmError::BadHeader("number out of range"))
}
