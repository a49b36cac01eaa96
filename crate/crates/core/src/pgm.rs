//! 8-bit binary PGM (`P5`) reader and writer.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Reads an 8-bit `P5` file. Files with `maxval > 255` are rejected.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| match reason {
        Decode::Unsupported(reason) => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason,
        },
        Decode::Malformed(reason) => Error::Malformed {
            path: path.to_path_buf(),
            reason,
        },
    })
}

/// Writes `u` as 8-bit `P5`, rounding to nearest and clamping to `[0, 255]`.
pub fn write_image(u: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(u)).map_err(|e| Error::io(path, e))
}

pub fn to_u8(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

pub fn encode(u: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", u.width(), u.height()).into_bytes();
    out.extend(u.data().iter().map(|&v| to_u8(v)));
    out
}

enum Decode {
    Unsupported(String),
    Malformed(String),
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> std::result::Result<usize, Decode> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Decode::Malformed(format!("bad {what} field")))
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<Image, Decode> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Decode::Unsupported("not a PGM file".into()));
    }
    if bytes[1] != b'5' {
        return Err(Decode::Unsupported(format!(
            "only binary P5 is supported, found P{}",
            bytes[1] as char
        )));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval == 0 {
        return Err(Decode::Malformed("maxval is zero".into()));
    }
    if maxval > 255 {
        return Err(Decode::Unsupported(format!(
            "16-bit samples (maxval {maxval}) are not supported"
        )));
    }
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(Decode::Malformed("missing separator after header".into()));
    }
    let body = &bytes[h.pos + 1..];
    let n = width * height;
    if width == 0 || height == 0 {
        return Err(Decode::Malformed("zero-sized image".into()));
    }
    if body.len() < n {
        return Err(Decode::Malformed(format!(
            "expected {n} samples, found {}",
            body.len()
        )));
    }
    let scale = 255.0 / maxval as f64;
    let data = body[..n].iter().map(|&b| b as f64 * scale).collect();
    Image::new(width, height, data).map_err(|e| Decode::Malformed(e.to_string()))
}
