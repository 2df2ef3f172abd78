//! Netpbm grayscale/color images (P2, P3, P5, P6).
//!
//! Samples are mapped onto 8-bit levels: values with `maxval = 255` pass
//! through unchanged, other ranges are rescaled with rounding.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub height: usize,
    pub width: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    /// Row-major, channel-fastest 8-bit samples.
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected a number at byte {start}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|e| format!("bad number: {e}"))
    }
}

fn rescale(v: usize, maxval: usize) -> Result<u8, String> {
    if v > maxval {
        return Err(format!("sample {v} exceeds maxval {maxval}"));
    }
    if maxval == 255 {
        Ok(v as u8)
    } else {
        Ok(((v as f64) * 255.0 / maxval as f64).round() as u8)
    }
}

pub fn parse_pnm(bytes: &[u8]) -> Result<PnmImage, String> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err("missing P magic".into());
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        other => return Err(format!("unsupported netpbm kind P{}", other as char)),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval == 0 || maxval > 65535 {
        return Err(format!("invalid maxval {maxval}"));
    }
    let count = width * height * channels;
    let mut pixels = Vec::with_capacity(count);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        cur.pos += 1;
        let sample = if maxval < 256 { 1 } else { 2 };
        let raster = bytes
            .get(cur.pos..cur.pos + count * sample)
            .ok_or("truncated raster")?;
        for s in raster.chunks_exact(sample) {
            let v = if sample == 1 {
                s[0] as usize
            } else {
                ((s[0] as usize) << 8) | s[1] as usize
            };
            pixels.push(rescale(v, maxval)?);
        }
    } else {
        for _ in 0..count {
            pixels.push(rescale(cur.number()?, maxval)?);
        }
    }
    Ok(PnmImage {
        height,
        width,
        channels,
        pixels,
    })
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<PnmImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pnm(&bytes).map_err(|r| Error::format(path, r))
}

/// Binary netpbm bytes: P5 for one channel, P6 for three.
pub fn encode_pnm(height: usize, width: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let kind = match channels {
        1 => 5,
        3 => 6,
        c => {
            return Err(Error::Invalid(format!(
                "netpbm images need 1 or 3 channels, got {c}"
            )))
        }
    };
    if pixels.len() != height * width * channels {
        return Err(Error::Shape(format!(
            "{} samples for a {height}x{width}x{channels} image",
            pixels.len()
        )));
    }
    let mut out = format!("P{kind}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_pnm(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    channels: usize,
    pixels: &[u8],
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pnm(height, width, channels, pixels)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_gray_with_comment() {
        let src = b"P2\n# tiny\n3 2\n255\n0 1 2\n253 254 255\n";
        let img = parse_pnm(src).unwrap();
        assert_eq!((img.height, img.width, img.channels), (2, 3, 1));
        assert_eq!(img.pixels, vec![0, 1, 2, 253, 254, 255]);
    }

    #[test]
    fn ascii_color_rescaled() {
        let src = b"P3 1 1 15 15 0 5";
        let img = parse_pnm(src).unwrap();
        assert_eq!(img.channels, 3);
        assert_eq!(img.pixels, vec![255, 0, 85]);
    }

    #[test]
    fn binary_roundtrip() {
        let pixels: Vec<u8> = (0..24).map(|v| (v * 10) as u8).collect();
        let bytes = encode_pnm(2, 4, 3, &pixels).unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        let img = parse_pnm(&bytes).unwrap();
        assert_eq!(img.pixels, pixels);
        let gray = encode_pnm(2, 2, 1, &[9, 8, 7, 6]).unwrap();
        assert_eq!(parse_pnm(&gray).unwrap().pixels, vec![9, 8, 7, 6]);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_pnm(b"P4 1 1 1 0").is_err());
        assert!(parse_pnm(b"P5 2 2 255\n\x00\x01").is_err());
        assert!(parse_pnm(b"P2 1 1 10 11").is_err());
        assert!(encode_pnm(1, 1, 2, &[0, 0]).is_err());
    }
}
