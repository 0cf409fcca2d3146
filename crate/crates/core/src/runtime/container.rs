//! `FPQ1` container files.
//!
//! ```text
//! "FPQ1" | u32 LE header length | UTF-8 JSON header | f32 LE payloads
//! ```
//!
//! The header is `{version, graph, tensors, metadata}`; each tensor entry is
//! `{dtype: "f32", shape, offset, nbytes}` with `offset` counted from the
//! first byte after the header. Payloads are written in tensor-name order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{LayerSpec, ModelContainer, LAYER_KINDS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FPQ1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    version: u32,
    graph: &'a [LayerSpec],
    tensors: BTreeMap<&'a str, TensorEntry>,
    metadata: &'a BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct HeaderIn {
    version: u32,
    graph: Vec<serde_json::Value>,
    tensors: BTreeMap<String, TensorEntry>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Serializes a container to bytes.
pub fn to_bytes(m: &ModelContainer) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut entries = BTreeMap::new();
    for (name, t) in &m.tensors {
        let nbytes = 4 * t.len() as u64;
        entries.insert(
            name.as_str(),
            TensorEntry { dtype: "f32".into(), shape: t.shape().to_vec(), offset, nbytes },
        );
        offset += nbytes;
    }
    let header = HeaderOut { version: FORMAT_VERSION, graph: &m.graph, tensors: entries, metadata: &m.metadata };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Header(e.to_string()))?;
    let header_len = u32::try_from(json.len()).map_err(|_| Error::Header("header exceeds 4 GiB".into()))?;

    let mut out = Vec::with_capacity(8 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for t in m.tensors.values() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses container bytes, validating the magic, payload bounds, layer
/// kinds and tensor references.
pub fn from_bytes(bytes: &[u8]) -> Result<ModelContainer> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(Error::TruncatedPayload("missing header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload_start = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            Error::TruncatedPayload(format!("header of {header_len} bytes exceeds file length {}", bytes.len()))
        })?;
    let header: HeaderIn =
        serde_json::from_slice(&bytes[8..payload_start]).map_err(|e| Error::Header(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::Header(format!("unsupported version {}", header.version)));
    }
    let payload = &bytes[payload_start..];

    let mut tensors = BTreeMap::new();
    for (name, entry) in header.tensors {
        if entry.dtype != "f32" {
            return Err(Error::Header(format!("tensor `{name}` has unsupported dtype `{}`", entry.dtype)));
        }
        let count: usize = entry.shape.iter().product();
        if entry.nbytes != 4 * count as u64 {
            return Err(Error::Header(format!(
                "tensor `{name}` declares {} bytes for shape {:?}",
                entry.nbytes, entry.shape
            )));
        }
        let end = entry.offset.checked_add(entry.nbytes).filter(|&e| e <= payload.len() as u64);
        let Some(end) = end else {
            return Err(Error::TruncatedPayload(format!(
                "tensor `{name}` at offset {} + {} bytes, payload is {} bytes",
                entry.offset,
                entry.nbytes,
                payload.len()
            )));
        };
        let data = payload[entry.offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.insert(name, Tensor::new(entry.shape, data)?);
    }

    let mut graph = Vec::with_capacity(header.graph.len());
    for record in header.graph {
        let kind = record.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
        if !LAYER_KINDS.contains(&kind.as_str()) {
            return Err(Error::UnknownLayerKind(kind));
        }
        let layer: LayerSpec =
            serde_json::from_value(record).map_err(|e| Error::Header(format!("{kind} record: {e}")))?;
        graph.push(layer);
    }

    let m = ModelContainer { tensors, graph, metadata: header.metadata };
    m.validate()?;
    Ok(m)
}

/// Writes `m` to `path` atomically (temporary file in the same directory,
/// then rename).
pub fn save_model(m: &ModelContainer, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(m)?;
    write_atomic(path.as_ref(), &bytes)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelContainer> {
    from_bytes(&std::fs::read(path)?)
}

/// Replaces `path` with `bytes` via a same-directory temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
