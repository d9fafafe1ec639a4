//! The NPY v1.0 subset used by the container: little-endian `<f4`/`<f8`,
//! C order, one or two dimensions. Anything else is rejected rather than
//! cast.

use std::fs;
use std::path::Path;

use super::TensorIoError;
use crate::linalg::Matrix;

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;

/// On-disk element type.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpyDtype {
    F32,
    F64,
}

impl NpyDtype {
    fn descr(self) -> &'static str {
        match self {
            NpyDtype::F32 => "<f4",
            NpyDtype::F64 => "<f8",
        }
    }

    fn size(self) -> usize {
        match self {
            NpyDtype::F32 => 4,
            NpyDtype::F64 => 8,
        }
    }
}

#[derive(Debug)]
struct Header {
    dtype: NpyDtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub fn read_npy(path: &Path) -> Result<Matrix, TensorIoError> {
    let bytes = fs::read(path).map_err(|e| TensorIoError::io(path, e))?;
    decode_npy(&bytes)
}

pub fn write_npy(path: &Path, m: &Matrix, dtype: NpyDtype) -> Result<(), TensorIoError> {
    fs::write(path, encode_npy(m, dtype)).map_err(|e| TensorIoError::io(path, e))
}

/// Serializes `m` as a 2-D array. With `F32` values are rounded to single
/// precision.
pub fn encode_npy(m: &Matrix, dtype: NpyDtype) -> Vec<u8> {
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        dtype.descr(),
        m.rows(),
        m.cols()
    );
    // pad with spaces so that preamble + header (incl. '\n') is 64-aligned
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let padding = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.push_str(&" ".repeat(padding));
    dict.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len() + m.data().len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    match dtype {
        NpyDtype::F64 => m.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        NpyDtype::F32 => m
            .data()
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
    }
    out
}

pub fn decode_npy(bytes: &[u8]) -> Result<Matrix, TensorIoError> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(TensorIoError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(TensorIoError::Truncated {
            expected: PREAMBLE_LEN,
            actual: bytes.len(),
        });
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(TensorIoError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(TensorIoError::Truncated {
            expected: data_start,
            actual: bytes.len(),
        });
    }
    let text = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|_| TensorIoError::MalformedHeader("header is not ASCII".into()))?;
    let header = parse_header(text)?;
    if header.fortran_order {
        return Err(TensorIoError::FortranOrder);
    }
    let (rows, cols) = match header.shape.as_slice() {
        [n] => (1, *n),
        [r, c] => (*r, *c),
        other => return Err(TensorIoError::UnsupportedShape(other.to_vec())),
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| TensorIoError::UnsupportedShape(header.shape.clone()))?;
    let payload = &bytes[data_start..];
    let expected = count * header.dtype.size();
    if payload.len() < expected {
        return Err(TensorIoError::Truncated {
            expected: data_start + expected,
            actual: bytes.len(),
        });
    }
    if payload.len() > expected {
        return Err(TensorIoError::TrailingBytes(payload.len() - expected));
    }
    let data: Vec<f64> = match header.dtype {
        NpyDtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        NpyDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok(Matrix::new(rows, cols, data)?)
}

/// Parses the Python dict literal, e.g.
/// `{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }`.
fn parse_header(text: &str) -> Result<Header, TensorIoError> {
    let malformed = |msg: &str| TensorIoError::MalformedHeader(format!("{msg}: {text:?}"));
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| malformed("not a dict"))?;

    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| malformed("expected quoted key"))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| malformed("expected ':'"))?
            .trim_start();
        let after = match key {
            "descr" => {
                let (v, after) = take_quoted(after).ok_or_else(|| malformed("bad descr"))?;
                descr = Some(v.to_string());
                after
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("False") {
                    fortran_order = Some(false);
                    a
                } else if let Some(a) = after.strip_prefix("True") {
                    fortran_order = Some(true);
                    a
                } else {
                    return Err(malformed("bad fortran_order"));
                }
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or_else(|| malformed("bad shape"))?;
                let close = inner.find(')').ok_or_else(|| malformed("bad shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| malformed("bad shape entry")))
                    .collect::<Result<Vec<_>, _>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            _ => return Err(malformed("unexpected key")),
        };
        let after = after.trim_start();
        rest = after.strip_prefix(',').unwrap_or(after).trim_start();
        if !after.starts_with(',') && !rest.is_empty() {
            return Err(malformed("expected ','"));
        }
    }

    let descr = descr.ok_or_else(|| malformed("missing descr"))?;
    let dtype = match descr.as_str() {
        "<f8" => NpyDtype::F64,
        "<f4" => NpyDtype::F32,
        _ => return Err(TensorIoError::UnsupportedDtype(descr)),
    };
    Ok(Header {
        dtype,
        fortran_order: fortran_order.ok_or_else(|| malformed("missing fortran_order"))?,
        shape: shape.ok_or_else(|| malformed("missing shape"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|&c| c == '\'' || c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}
