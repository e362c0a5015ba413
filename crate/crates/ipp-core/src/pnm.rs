//! Binary netpbm codec: P6 (RGB) and P5 (grayscale), maxval 255.
//!
//! Only the subset needed by the map bundle and render outputs is
//! implemented. Encoding is bit-exact: `P6\n<w> <h>\n255\n` followed by the
//! raw raster, so round-tripping a bundle reproduces the input bytes.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PnmError {
    #[error("not a {expected} file: bad magic bytes")]
    BadMagic { expected: &'static str },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("invalid header field: {0}")]
    InvalidHeader(String),
    #[error("only maxval 255 is supported, got {0}")]
    UnsupportedMaxval(u32),
    #[error("raster has {actual} bytes, expected {expected}")]
    RasterSize { expected: usize, actual: usize },
}

/// Decoded grayscale (P5) or per-channel (P6) raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for P5, 3 for P6.
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn encode_p6(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3, "rgb raster size mismatch");
    let mut out = format!("P6\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(rgb);
    out
}

pub fn encode_p5(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height, "gray raster size mismatch");
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend_from_slice(gray);
    out
}

pub fn decode_p6(bytes: &[u8]) -> Result<PnmImage, PnmError> {
    decode(bytes, b"P6", 3)
}

pub fn decode_p5(bytes: &[u8]) -> Result<PnmImage, PnmError> {
    decode(bytes, b"P5", 1)
}

fn decode(bytes: &[u8], magic: &'static [u8; 2], channels: usize) -> Result<PnmImage, PnmError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(PnmError::BadMagic {
            expected: if channels == 3 { "P6" } else { "P5" },
        });
    }
    let mut pos = 2;
    let width = read_header_int(bytes, &mut pos)?;
    let height = read_header_int(bytes, &mut pos)?;
    let maxval = read_header_int(bytes, &mut pos)?;
    if maxval != 255 {
        return Err(PnmError::UnsupportedMaxval(maxval as u32));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PnmError::TruncatedHeader),
    }
    let expected = width * height * channels;
    let raster = &bytes[pos..];
    if raster.len() != expected {
        return Err(PnmError::RasterSize {
            expected,
            actual: raster.len(),
        });
    }
    Ok(PnmImage {
        width,
        height,
        channels,
        data: raster.to_vec(),
    })
}

/// Skip whitespace and `#` comments, then parse one decimal integer.
fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize, PnmError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(b) = bytes.get(*pos) {
                    *pos += 1;
                    if *b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(PnmError::TruncatedHeader),
        }
    }
    let start = *pos;
    while matches!(bytes.get(*pos), Some(b) if b.is_ascii_digit()) {
        *pos += 1;
    }
    if *pos == start {
        let found = bytes[start] as char;
        return Err(PnmError::InvalidHeader(format!(
            "expected digit, found {found:?}"
        )));
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).expect("digits are utf8");
    text.parse()
        .map_err(|_| PnmError::InvalidHeader(format!("integer out of range: {text}")))
}
