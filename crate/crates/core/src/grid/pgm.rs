//! Binary (P5) PGM ingestion for 2D label maps; gray values become labels.

use std::fs;
use std::path::Path;

use super::LabelGrid;
use crate::error::{Error, Result};

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Header {
                offset: start,
                msg: format!("expected {what}"),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Header {
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

/// Decodes a P5 PGM. `num_classes` defaults to `maxval + 1`; every gray
/// value must be below it. Only 8-bit maxvals are accepted.
pub fn decode_pgm(bytes: &[u8], num_classes: Option<u16>) -> Result<LabelGrid> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::Header {
            offset: 0,
            msg: "not a binary PGM (expected \"P5\")".into(),
        });
    }
    let mut p = HeaderParser { bytes, pos: 2 };
    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval_at = p.pos;
    let maxval = p.number("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::Header {
            offset: maxval_at,
            msg: format!("maxval {maxval} unsupported (8-bit only)"),
        });
    }
    match bytes.get(p.pos) {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => {
            return Err(Error::Header {
                offset: p.pos,
                msg: "expected single whitespace after maxval".into(),
            })
        }
    }
    if width == 0 || height == 0 {
        return Err(Error::Header {
            offset: 2,
            msg: format!("zero extent {width}x{height}"),
        });
    }
    let header_len = p.pos;
    let expected = width * height;
    let payload = &bytes[header_len..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            offset: bytes.len(),
            expected,
            found: payload.len(),
        });
    }
    let payload = &payload[..expected];
    let num_classes = num_classes.unwrap_or(maxval as u16 + 1);
    if let Some(i) = payload.iter().position(|&l| u16::from(l) >= num_classes) {
        return Err(Error::LabelOutOfRange {
            offset: header_len + i,
            label: payload[i],
            num_classes,
        });
    }
    LabelGrid::new(&[height, width], payload.to_vec(), num_classes)
}

/// Encodes a 2D grid as P5 with `maxval = num_classes - 1`, so decoding
/// without a declared class count restores it. Needs at least 2 classes.
pub fn encode_pgm(g: &LabelGrid) -> Result<Vec<u8>> {
    if g.ndim() != 2 {
        return Err(Error::InvalidGrid("PGM holds 2D grids only".into()));
    }
    if g.num_classes() < 2 {
        return Err(Error::InvalidGrid("PGM needs num_classes >= 2".into()));
    }
    let [h, w] = [g.dims()[0], g.dims()[1]];
    let mut out = format!("P5\n{w} {h}\n{}\n", g.num_classes() - 1).into_bytes();
    out.extend_from_slice(g.labels());
    Ok(out)
}

pub fn read_pgm(path: impl AsRef<Path>, num_classes: Option<u16>) -> Result<LabelGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, num_classes)
}

pub fn write_pgm(g: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(g)?).map_err(|e| Error::io(path, e))
}
