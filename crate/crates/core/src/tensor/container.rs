//! Lossless on-disk tensor format.
//!
//! ```text
//! "NUCTENS1" | JSON header | space padding ending in '\n' | f32 LE payload
//! ```
//!
//! The header and padding are sized so the payload starts on a 64-byte
//! boundary. The header carries `name`, `shape`, `dtype` (`"f32"`) and
//! `byte_order` (`"LE"`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 8] = b"NUCTENS1";
const ALIGN: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_order: String,
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset: offset as u64, message: message.into() }
}

pub fn encode(tensor: &Tensor<f32>, name: &str) -> Vec<u8> {
    let header = Header {
        name: name.to_string(),
        shape: tensor.shape().to_vec(),
        dtype: "f32".into(),
        byte_order: "LE".into(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(ALIGN * 2 + tensor.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&json);
    let end = (out.len() + 1).div_ceil(ALIGN) * ALIGN;
    out.resize(end - 1, b' ');
    out.push(b'\n');
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<(Header, Tensor<f32>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err(0, "missing NUCTENS1 magic"));
    }
    let body = &bytes[MAGIC.len()..];
    let mut stream = serde_json::Deserializer::from_slice(body).into_iter::<Header>();
    let header = match stream.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(format_err(MAGIC.len() + stream.byte_offset(), format!("bad header: {e}"))),
        None => return Err(format_err(MAGIC.len(), "missing header")),
    };
    let json_end = MAGIC.len() + stream.byte_offset();
    let payload_start = json_end.div_ceil(ALIGN) * ALIGN;
    let payload_start = if payload_start == json_end { json_end + ALIGN } else { payload_start };
    if bytes.len() < payload_start {
        return Err(format_err(bytes.len(), "truncated header padding"));
    }
    if let Some(p) = bytes[json_end..payload_start].iter().position(|b| !b.is_ascii_whitespace()) {
        return Err(format_err(json_end + p, "non-whitespace byte in header padding"));
    }
    if header.dtype != "f32" {
        return Err(format_err(MAGIC.len(), format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.byte_order != "LE" {
        return Err(format_err(MAGIC.len(), format!("unsupported byte order {:?}", header.byte_order)));
    }
    let n: usize = header.shape.iter().product();
    let payload = &bytes[payload_start..];
    if payload.len() != n * 4 {
        return Err(format_err(
            payload_start + payload.len().min(n * 4),
            format!("payload has {} bytes, shape {:?} needs {}", payload.len(), header.shape, n * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let tensor = Tensor::new(header.shape.clone(), data)?;
    Ok((header, tensor))
}

pub fn write(path: &Path, tensor: &Tensor<f32>, name: &str) -> Result<()> {
    write_atomic(path, &encode(tensor, name))
}

pub fn read(path: &Path) -> Result<(Header, Tensor<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn payload_is_aligned() {
        let t = Tensor::from_fn(&[1, 3, 5], |i| i as f32);
        let bytes = encode(&t, "x");
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!((bytes.len() - 15 * 4) % 64, 0);
        assert_eq!(bytes[bytes.len() - 15 * 4 - 1], b'\n');
    }

    #[test]
    fn corrupt_inputs_report_offsets() {
        let t = Tensor::from_fn(&[2, 2], |i| i as f32);
        let mut bytes = encode(&t, "x");
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format { .. })));
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bad = MAGIC.to_vec();
        bad.extend_from_slice(b"{\"name\": 3}");
        assert!(matches!(decode(&bad), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            shape in prop::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
            name in "[a-z.0-9]{0,40}",
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed as u64 * 2654435761 + i as u64 * 40503) as u32 & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(shape, data).unwrap();
            let (h, back) = decode(&encode(&t, &name)).unwrap();
            prop_assert_eq!(h.name, name);
            let same = t.data().iter().zip(back.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
            prop_assert_eq!(t.shape(), back.shape());
        }
    }
}
