//! Binary array container: magic `\x93NUMPY`, version 1.0, a 2-byte
//! little-endian header length, a Python-dict header naming dtype, storage
//! order, and shape, then raw little-endian values.
//!
//! Only row-major `<f4`/`<f8` payloads are accepted. Every check is strict —
//! alignment, the terminating newline, exact payload length — so a corrupted
//! file fails loudly instead of yielding plausible garbage.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Element type of a container payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    /// Little-endian IEEE-754 32-bit float (`<f4`).
    F4,
    /// Little-endian IEEE-754 64-bit float (`<f8`).
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }

    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
        }
    }
}

/// A parsed container: row-major values with their declared shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Row-major values, widened to f64.
    pub data: Vec<f64>,
}

pub fn read_array_container(path: &Path) -> Result<ArrayContainer> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read array container {}: {e}", path.display())))?;
    parse_array_container(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Parse container bytes. Split from the file wrapper so fixtures and fuzz
/// probes can run in memory.
pub fn parse_array_container(bytes: &[u8]) -> Result<ArrayContainer> {
    if bytes.len() < 10 {
        return Err(Error::Format(format!(
            "container of {} bytes is shorter than the 10-byte preamble",
            bytes.len()
        )));
    }
    for (i, &want) in MAGIC.iter().enumerate() {
        if bytes[i] != want {
            return Err(Error::Format(format!(
                "bad magic at offset {i}: expected 0x{want:02x}, found 0x{:02x}",
                bytes[i]
            )));
        }
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::Format(format!(
            "unsupported container version {}.{}",
            bytes[6], bytes[7]
        )));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header_end = 10 + hlen;
    if (header_end) % 16 != 0 {
        return Err(Error::Format(format!(
            "header length {hlen} leaves the payload misaligned (10 + {hlen} is not a multiple of 16)"
        )));
    }
    if bytes.len() < header_end {
        return Err(Error::Format(format!(
            "header truncated: declared {hlen} bytes, file holds {}",
            bytes.len() - 10
        )));
    }
    let header = std::str::from_utf8(&bytes[10..header_end])
        .map_err(|_| Error::Format("header is not valid UTF-8".into()))?;
    if !header.ends_with('\n') {
        return Err(Error::Format("header does not end with a newline".into()));
    }
    let (dtype, shape) = parse_header_dict(header.trim_end_matches('\n'))?;

    let count: usize = shape.iter().product();
    let payload = &bytes[header_end..];
    let expected = count
        .checked_mul(dtype.size())
        .ok_or_else(|| Error::Format(format!("shape {shape:?} overflows the payload size")))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload truncated or oversized: shape {:?} as {} needs {} bytes, found {}",
            shape,
            dtype.descr(),
            expected,
            payload.len()
        )));
    }
    let data = match dtype {
        Dtype::F4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F8 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
            .collect(),
    };
    Ok(ArrayContainer { dtype, shape, data })
}

/// Parse the `{'descr': ..., 'fortran_order': ..., 'shape': (...), }` dict.
/// Exactly those three keys are allowed.
fn parse_header_dict(text: &str) -> Result<(Dtype, Vec<usize>)> {
    let body = text.trim_end_matches(' ');
    let inner = body
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("header dict is not brace-delimited: {body:?}")))?;

    let mut dtype = None;
    let mut order_row_major = None;
    let mut shape = None;
    for item in split_dict_items(inner)? {
        let (key, value) = item.split_once(':').ok_or_else(|| {
            Error::Format(format!("header entry {item:?} is not a `key: value` pair"))
        })?;
        let key = key.trim();
        let value = value.trim();
        let key = key
            .strip_prefix('\'')
            .and_then(|k| k.strip_suffix('\''))
            .ok_or_else(|| Error::Format(format!("header key {key:?} is not single-quoted")))?;
        match key {
            "descr" => {
                dtype = Some(match value {
                    "'<f4'" => Dtype::F4,
                    "'<f8'" => Dtype::F8,
                    other => {
                        return Err(Error::Format(format!(
                            "unsupported dtype descriptor {other}"
                        )))
                    }
                });
            }
            "fortran_order" => {
                order_row_major = Some(match value {
                    "False" => true,
                    "True" => {
                        return Err(Error::Format(
                            "column-major (fortran_order: True) storage is not supported".into(),
                        ))
                    }
                    other => {
                        return Err(Error::Format(format!(
                            "storage-order flag must be True or False, found {other:?}"
                        )))
                    }
                });
            }
            "shape" => shape = Some(parse_shape_tuple(value)?),
            other => {
                return Err(Error::Format(format!("unknown header key {other:?}")));
            }
        }
    }
    let dtype = dtype.ok_or_else(|| Error::Format("header lacks a 'descr' entry".into()))?;
    if order_row_major.is_none() {
        return Err(Error::Format("header lacks a 'fortran_order' entry".into()));
    }
    let shape = shape.ok_or_else(|| Error::Format("header lacks a 'shape' entry".into()))?;
    Ok((dtype, shape))
}

/// Split dict items on commas that sit outside parentheses, dropping the
/// conventional trailing comma.
fn split_dict_items(inner: &str) -> Result<Vec<&str>> {
    let mut items = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| Error::Format("unbalanced parentheses in header".into()))?;
            }
            ',' if depth == 0 => {
                items.push(&inner[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::Format("unbalanced parentheses in header".into()));
    }
    let tail = inner[start..].trim();
    if !tail.is_empty() {
        items.push(&inner[start..]);
    }
    let items: Vec<&str> = items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::Format("header dict is empty".into()));
    }
    Ok(items)
}

fn parse_shape_tuple(value: &str) -> Result<Vec<usize>> {
    let inner = value
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("shape {value:?} is not a parenthesized tuple")))?;
    let mut dims = Vec::new();
    for part in inner.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue; // the trailing comma of 1-tuples, or the empty tuple
        }
        dims.push(part.parse::<usize>().map_err(|_| {
            Error::Format(format!("shape dimension {part:?} is not a non-negative integer"))
        })?);
    }
    Ok(dims)
}

/// Serialize values into container bytes (row-major), shrinking to `<f4`
/// when asked. The inverse of [`parse_array_container`].
pub fn build_array_container(dtype: Dtype, shape: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let count: usize = shape.iter().product();
    if count != data.len() {
        return Err(Error::Format(format!(
            "shape {:?} holds {count} values but {} were given",
            shape,
            data.len()
        )));
    }
    let shape_txt = match shape.len() {
        0 => "()".to_string(),
        1 => format!("({},)", shape[0]),
        _ => format!(
            "({})",
            shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape_txt}, }}",
        dtype.descr()
    );
    // Pad with spaces so the payload starts 16-byte aligned; final byte is \n.
    let unpadded = 10 + dict.len() + 1;
    let hlen = (unpadded + 15) / 16 * 16 - 10;
    let mut bytes = Vec::with_capacity(10 + hlen + count * dtype.size());
    bytes.extend_from_slice(MAGIC);
    bytes.push(1);
    bytes.push(0);
    bytes.extend_from_slice(&u16::try_from(hlen)
        .map_err(|_| Error::Format("header too long for a v1.0 container".into()))?
        .to_le_bytes());
    bytes.extend_from_slice(dict.as_bytes());
    bytes.resize(10 + hlen - 1, b' ');
    bytes.push(b'\n');
    match dtype {
        Dtype::F4 => {
            for &v in data {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Dtype::F8 => {
            for &v in data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(bytes)
}

pub fn write_array_container(path: &Path, dtype: Dtype, shape: &[usize], data: &[f64]) -> Result<()> {
    std::fs::write(path, build_array_container(dtype, shape, data)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        build_array_container(Dtype::F8, &[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()
    }

    #[test]
    fn hand_built_container_round_trips() {
        let parsed = parse_array_container(&fixture()).unwrap();
        assert_eq!(parsed.shape, [2, 3]);
        assert_eq!(parsed.dtype, Dtype::F8);
        assert_eq!(parsed.data, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn f4_payload_parses_with_widening() {
        let bytes = build_array_container(Dtype::F4, &[4], &[1.5, -2.0, 0.25, 8.0]).unwrap();
        let parsed = parse_array_container(&bytes).unwrap();
        assert_eq!(parsed.dtype, Dtype::F4);
        assert_eq!(parsed.data, [1.5, -2.0, 0.25, 8.0]);
    }

    #[test]
    fn one_dim_and_scalar_shapes_round_trip() {
        let bytes = build_array_container(Dtype::F8, &[5], &[0.0; 5]).unwrap();
        assert_eq!(parse_array_container(&bytes).unwrap().shape, [5]);
        let bytes = build_array_container(Dtype::F8, &[], &[7.0]).unwrap();
        let parsed = parse_array_container(&bytes).unwrap();
        assert_eq!(parsed.shape, Vec::<usize>::new());
        assert_eq!(parsed.data, [7.0]);
    }

    #[test]
    fn wrong_magic_byte_names_the_offset() {
        let mut bytes = fixture();
        bytes[3] = b'X';
        let err = parse_array_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("offset 3"), "{err}");
    }

    /// Same-length byte substitution inside the header (the file is not
    /// valid UTF-8 as a whole, so string replace would mangle the magic).
    fn patch(bytes: &mut [u8], from: &[u8], to: &[u8]) {
        assert_eq!(from.len(), to.len());
        let pos = bytes
            .windows(from.len())
            .position(|w| w == from)
            .expect("pattern present");
        bytes[pos..pos + to.len()].copy_from_slice(to);
    }

    #[test]
    fn unsupported_dtype_is_distinct() {
        let base = build_array_container(Dtype::F8, &[1], &[0.0]).unwrap();
        let mut bytes = base.clone();
        patch(&mut bytes, b"<f8", b"<i8");
        let err = parse_array_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported dtype"), "{err}");
        let mut bytes = base;
        patch(&mut bytes, b"<f8", b">f8");
        let err = parse_array_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("unsupported dtype"), "{err}");
    }

    #[test]
    fn fortran_order_true_is_rejected() {
        let mut bytes = fixture();
        patch(&mut bytes, b"False, 'shape'", b"True,  'shape'");
        let err = parse_array_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("column-major"), "{err}");
    }

    #[test]
    fn shape_payload_mismatch_is_a_truncation_error() {
        let mut bytes = fixture();
        bytes.truncate(bytes.len() - 8);
        let err = parse_array_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
        let mut bytes = fixture();
        bytes.extend_from_slice(&[0u8; 8]);
        let err = parse_array_container(&bytes).unwrap_err().to_string();
        assert!(err.contains("truncated or oversized"), "{err}");
    }

    #[test]
    fn every_mutation_of_the_first_16_bytes_is_rejected() {
        let good = fixture();
        assert!(parse_array_container(&good).is_ok());
        for offset in 0..16 {
            for value in 0..=255u8 {
                if value == good[offset] {
                    continue;
                }
                let mut bytes = good.clone();
                bytes[offset] = value;
                let got = parse_array_container(&bytes);
                assert!(
                    matches!(got, Err(Error::Format(_))),
                    "mutation at offset {offset} to 0x{value:02x} was not rejected as a format error: {got:?}"
                );
            }
        }
    }
}
