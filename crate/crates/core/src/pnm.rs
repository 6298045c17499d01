//! Binary Netpbm encoding: P6 colour images and P5 greymaps at 8 or 16 bits.
//! Sixteen-bit samples are big-endian as Netpbm requires.

use std::path::Path;

use crate::error::{Error, Result};

fn header(magic: &str, width: usize, height: usize, maxval: u32) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n{maxval}\n").into_bytes()
}

pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Vec<u8> {
    assert_eq!(rgb.len(), width * height * 3);
    let mut out = header("P6", width, height, 255);
    out.extend_from_slice(rgb);
    out
}

pub fn encode_pgm8(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = header("P5", width, height, 255);
    out.extend_from_slice(gray);
    out
}

pub fn encode_pgm16(width: usize, height: usize, gray: &[u16]) -> Vec<u8> {
    assert_eq!(gray.len(), width * height);
    let mut out = header("P5", width, height, 65535);
    for v in gray {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Decoded Netpbm raster. Samples are widened to `u16`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub maxval: u32,
    pub samples: Vec<u16>,
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Shape(format!("malformed netpbm data: {}", msg.into()))
}

pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_err("unexpected end of header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(parse_err(format!("unsupported magic {other}"))),
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| parse_err(format!("bad number {s}")));
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)? as u32;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(format!("maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let count = width * height * channels;
    let wide = maxval > 255;
    let need = if wide { count * 2 } else { count };
    let body = bytes
        .get(pos..pos + need)
        .ok_or_else(|| parse_err("truncated raster"))?;
    let samples = if wide {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        body.iter().map(|&b| b as u16).collect()
    };
    Ok(Raster {
        width,
        height,
        channels,
        maxval,
        samples,
    })
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let rgb: Vec<u8> = (0..2 * 3 * 3).map(|v| v as u8 * 13).collect();
        let r = decode(&encode_ppm(3, 2, &rgb)).unwrap();
        assert_eq!((r.width, r.height, r.channels, r.maxval), (3, 2, 3, 255));
        assert_eq!(r.samples, rgb.iter().map(|&v| v as u16).collect::<Vec<_>>());
    }

    #[test]
    fn pgm16_is_big_endian() {
        let bytes = encode_pgm16(2, 1, &[0x0102, 0xfffe]);
        assert!(bytes.ends_with(&[0x01, 0x02, 0xff, 0xfe]));
        assert_eq!(decode(&bytes).unwrap().samples, vec![0x0102, 0xfffe]);
    }

    #[test]
    fn comments_and_truncation() {
        let mut bytes = b"P5\n# note\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert!(decode(&bytes).is_err());
        bytes.push(4);
        assert_eq!(decode(&bytes).unwrap().samples, vec![1, 2, 3, 4]);
        assert!(decode(b"P3\n1 1\n255\n0 0 0").is_err());
    }
}
