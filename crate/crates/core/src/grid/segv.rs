//! SEGV container: a little-endian header followed by a raw payload.
//!
//! ```text
//! "SEGV" | version u16 = 1 | kind u8 | ndim u8 | dims: ndim x u32
//!        | num_classes u16 | spacing: ndim x f32 | payload
//! ```
//!
//! Labels and masks store one byte per site. Likelihoods store one f32 per
//! (class, site), class-major. In memory likelihoods are f64; reading widens
//! exactly and writing narrows to f32.

use std::fs;
use std::path::Path;

use super::{BinaryMask, LabelGrid, LikelihoodGrid, Shape};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SEGV";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegvKind {
    Labels = 0,
    Mask = 1,
    Likelihood = 2,
}

impl SegvKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Labels),
            1 => Some(Self::Mask),
            2 => Some(Self::Likelihood),
            _ => None,
        }
    }
}

struct Header {
    shape: Shape,
    num_classes: u16,
    spacing: Vec<f32>,
}

fn encode_header(kind: SegvKind, shape: Shape, num_classes: u16, spacing: &[f32]) -> Vec<u8> {
    let ndim = shape.ndim();
    let mut out = Vec::with_capacity(10 + 8 * ndim);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(kind as u8);
    out.push(ndim as u8);
    for &d in shape.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&num_classes.to_le_bytes());
    for &s in spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let rest = &self.bytes[self.pos..];
        if rest.len() < n {
            return Err(Error::Header {
                offset: self.pos,
                msg: format!("unexpected end of file reading {what}"),
            });
        }
        let out = &rest[..n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_bits(self.u32(what)?))
    }
}

fn decode_header(bytes: &[u8], expected: SegvKind) -> Result<(Header, &[u8], usize)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Header {
            offset: 0,
            msg: "bad magic, expected \"SEGV\"".into(),
        });
    }
    let at = cur.pos;
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(Error::Header {
            offset: at,
            msg: format!("unsupported version {version}"),
        });
    }
    let at = cur.pos;
    let kind_byte = cur.u8("kind")?;
    match SegvKind::from_byte(kind_byte) {
        Some(k) if k == expected => {}
        Some(k) => {
            return Err(Error::Header {
                offset: at,
                msg: format!("expected {expected:?} payload, file holds {k:?}"),
            })
        }
        None => {
            return Err(Error::Header {
                offset: at,
                msg: format!("unknown kind {kind_byte}"),
            })
        }
    }
    let at = cur.pos;
    let ndim = usize::from(cur.u8("ndim")?);
    if !(2..=3).contains(&ndim) {
        return Err(Error::Header {
            offset: at,
            msg: format!("ndim must be 2 or 3, got {ndim}"),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    for axis in 0..ndim {
        let at = cur.pos;
        let d = cur.u32("dims")?;
        if d == 0 {
            return Err(Error::Header {
                offset: at,
                msg: format!("dimension {axis} is zero"),
            });
        }
        dims.push(d as usize);
    }
    let shape = Shape::new(&dims).map_err(|e| Error::Header {
        offset: 8,
        msg: e.to_string(),
    })?;
    let at = cur.pos;
    let num_classes = cur.u16("num_classes")?;
    let class_ok = match expected {
        SegvKind::Mask => num_classes == 2,
        _ => (1..=256).contains(&num_classes),
    };
    if !class_ok {
        return Err(Error::Header {
            offset: at,
            msg: format!("invalid num_classes {num_classes} for {expected:?}"),
        });
    }
    let mut spacing = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let at = cur.pos;
        let s = cur.f32("spacing")?;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Header {
                offset: at,
                msg: format!("spacing must be positive, got {s}"),
            });
        }
        spacing.push(s);
    }
    let header_len = cur.pos;
    Ok((
        Header {
            shape,
            num_classes,
            spacing,
        },
        &bytes[header_len..],
        header_len,
    ))
}

fn check_payload_len(payload: &[u8], expected: usize, header_len: usize) -> Result<()> {
    if payload.len() < expected {
        return Err(Error::Truncated {
            offset: header_len + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Payload {
            offset: header_len + expected,
            msg: format!("{} trailing bytes", payload.len() - expected),
        });
    }
    Ok(())
}

pub fn encode_label_grid(g: &LabelGrid) -> Vec<u8> {
    let mut out = encode_header(SegvKind::Labels, g.shape(), g.num_classes(), g.spacing());
    out.extend_from_slice(g.labels());
    out
}

pub fn decode_label_grid(bytes: &[u8]) -> Result<LabelGrid> {
    let (h, payload, header_len) = decode_header(bytes, SegvKind::Labels)?;
    check_payload_len(payload, h.shape.len(), header_len)?;
    if let Some(i) = payload.iter().position(|&l| u16::from(l) >= h.num_classes) {
        return Err(Error::LabelOutOfRange {
            offset: header_len + i,
            label: payload[i],
            num_classes: h.num_classes,
        });
    }
    LabelGrid::new(h.shape.dims(), payload.to_vec(), h.num_classes)?.with_spacing(&h.spacing)
}

pub fn encode_mask(m: &BinaryMask) -> Vec<u8> {
    let ones = vec![1.0f32; m.shape().ndim()];
    let mut out = encode_header(SegvKind::Mask, m.shape(), 2, &ones);
    out.extend(m.bits().iter().map(|&b| u8::from(b)));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let (h, payload, header_len) = decode_header(bytes, SegvKind::Mask)?;
    check_payload_len(payload, h.shape.len(), header_len)?;
    if let Some(i) = payload.iter().position(|&b| b > 1) {
        return Err(Error::Payload {
            offset: header_len + i,
            msg: format!("mask byte {} is not 0 or 1", payload[i]),
        });
    }
    BinaryMask::from_shape(h.shape, payload.iter().map(|&b| b == 1).collect())
}

pub fn encode_likelihood_grid(f: &LikelihoodGrid) -> Vec<u8> {
    let ones = vec![1.0f32; f.shape().ndim()];
    let mut out = encode_header(SegvKind::Likelihood, f.shape(), f.num_classes(), &ones);
    out.reserve(4 * f.values().len());
    for &v in f.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// The `normalized` flag is not stored; it is set when the decoded channel
/// sums are 1 within tolerance.
pub fn decode_likelihood_grid(bytes: &[u8]) -> Result<LikelihoodGrid> {
    let (h, payload, header_len) = decode_header(bytes, SegvKind::Likelihood)?;
    let count = h.shape.len() * usize::from(h.num_classes);
    check_payload_len(payload, 4 * count, header_len)?;
    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::Payload {
                offset: header_len + 4 * i,
                msg: format!("non-finite likelihood {v}"),
            });
        }
        values.push(f64::from(v));
    }
    LikelihoodGrid::detect_normalized(h.shape, h.num_classes, values)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a label grid from a SEGV file or a binary PGM (sniffed by magic).
/// PGM class counts default to `maxval + 1`.
pub fn read_label_grid(path: impl AsRef<Path>) -> Result<LabelGrid> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.starts_with(b"P5") {
        super::decode_pgm(&bytes, None)
    } else {
        decode_label_grid(&bytes)
    }
}

pub fn write_label_grid(g: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_label_grid(g))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask(&read_bytes(path.as_ref())?)
}

pub fn write_mask(m: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_mask(m))
}

pub fn read_likelihood_grid(path: impl AsRef<Path>) -> Result<LikelihoodGrid> {
    decode_likelihood_grid(&read_bytes(path.as_ref())?)
}

pub fn write_likelihood_grid(f: &LikelihoodGrid, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_likelihood_grid(f))
}
