//! `MDNW` weights container.
//!
//! ```text
//! "MDNW" | version u32 LE | header length u32 LE | UTF-8 JSON header
//!        | payload: f32 LE, row-major, tensor offsets counted in floats
//!        | CRC32 of payload, u32 LE
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MdnError, MdnMetadata, MdnWeights, Tensor};

pub const MAGIC: &[u8; 4] = b"MDNW";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    metadata: MdnMetadata,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(w: &MdnWeights) -> Vec<u8> {
    let mut entries = Vec::with_capacity(w.tensors.len());
    let mut offset = 0;
    for t in &w.tensors {
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
            count: t.data.len(),
        });
        offset += t.data.len();
    }
    let header = serde_json::to_vec(&Header {
        metadata: w.metadata.clone(),
        tensors: entries,
    })
    .expect("header serializes");

    let mut payload = Vec::with_capacity(offset * 4);
    for t in &w.tensors {
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + header.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    out
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32, MdnError> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(MdnError::Truncated {
            expected: at + 4,
            actual: bytes.len(),
        })
}

pub fn from_bytes(bytes: &[u8]) -> Result<MdnWeights, MdnError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(MdnError::BadMagic);
    }
    let version = read_u32(bytes, 4)?;
    if version != FORMAT_VERSION {
        return Err(MdnError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = read_u32(bytes, 8)? as usize;
    let header_end = 12 + header_len;
    let header_bytes = bytes.get(12..header_end).ok_or(MdnError::Truncated {
        expected: header_end,
        actual: bytes.len(),
    })?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| MdnError::Header(e.to_string()))?;

    let floats: usize = header.tensors.iter().map(|t| t.count).sum();
    let expected = header_end + floats * 4 + 4;
    if bytes.len() < expected {
        return Err(MdnError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(MdnError::Header(format!(
            "{} trailing bytes after checksum",
            bytes.len() - expected
        )));
    }
    let payload = &bytes[header_end..header_end + floats * 4];
    let stored = read_u32(bytes, header_end + floats * 4)?;
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(MdnError::Checksum { stored, computed });
    }

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.shape.iter().product::<usize>() != e.count {
            return Err(MdnError::Shape(format!(
                "{}: shape {:?} holds {} values, header says {}",
                e.name,
                e.shape,
                e.shape.iter().product::<usize>(),
                e.count
            )));
        }
        if e.offset + e.count > floats {
            return Err(MdnError::Header(format!(
                "{}: range {}..{} outside payload of {floats} floats",
                e.name,
                e.offset,
                e.offset + e.count
            )));
        }
        let raw = &payload[e.offset * 4..(e.offset + e.count) * 4];
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    MdnWeights::new(header.metadata, tensors)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<MdnWeights, MdnError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| MdnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

pub fn save_weights(w: &MdnWeights, path: impl AsRef<Path>) -> Result<(), MdnError> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(w)).map_err(|source| MdnError::Io {
        path: path.display().to_string(),
        source,
    })
}
