//! File helpers: atomic writes, JSON documents and 8-bit PGM images.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::json(path, e))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

/// Encodes a single-channel image as binary PGM (P5). Values are clamped to
/// `[0, 255]` and rounded.
pub fn encode_pgm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if c != 1 {
        return Err(Error::Dimension(format!("PGM export needs one channel, got {c}")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|v| v.clamp(0.0, 255.0).round() as u8));
    Ok(out)
}

pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    write_atomic(path, &encode_pgm(image)?)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let fmt = |offset: usize, m: &str| Error::Format { offset: offset as u64, message: m.to_string() };
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fmt(pos, "truncated PGM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(fmt(0, "not a binary PGM (P5)"));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].1.parse().map_err(|_| fmt(fields[i].0, "bad PGM header number"))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(fmt(fields[3].0, "only 8-bit PGM is supported"));
    }
    pos += 1;
    let payload = bytes.get(pos..pos + w * h).ok_or_else(|| fmt(bytes.len(), "truncated PGM payload"))?;
    Tensor::image(h, w, payload.iter().map(|&b| b as f32).collect())
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_of_integer_image() {
        let img = Tensor::image(3, 4, (0..12).map(|v| (v * 20) as f32).collect()).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(decode_pgm(&bytes).unwrap(), img);
    }

    #[test]
    fn pgm_clamps() {
        let img = Tensor::image(1, 2, vec![-5.0, 300.0]).unwrap();
        let bytes = encode_pgm(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0, 255]);
    }
}
