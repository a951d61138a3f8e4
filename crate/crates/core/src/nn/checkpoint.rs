//! Binary checkpoint: magic, version, JSON manifest, raw little-endian payloads.
//!
//! ```text
//! b"SZNNCKPT" | u32 version | u64 manifest_len | manifest (JSON) | f64 LE data...
//! ```
//! Each tensor entry in the manifest records its byte offset into the payload
//! section and a SHA-256 of its bytes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NnError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SZNNCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
    sha256: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

fn sha_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn checkpoint_digest(bytes: &[u8]) -> String {
    sha_hex(bytes)
}

pub fn save_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut entries = Vec::with_capacity(ckpt.tensors.len());
    for (name, t) in &ckpt.tensors {
        let start = payload.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: start as u64,
            len: (payload.len() - start) as u64,
            sha256: sha_hex(&payload[start..]),
        });
    }
    let manifest = serde_json::to_vec(&Manifest {
        version: VERSION,
        meta: ckpt.meta.clone(),
        tensors: entries,
    })
    .expect("manifest serializes");
    let mut out = Vec::with_capacity(20 + manifest.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    out
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Checkpoint, NnError> {
    let bad = |m: String| NnError::Checkpoint(m);
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes
        .get(20..20usize.saturating_add(mlen))
        .ok_or_else(|| bad(format!("manifest of {mlen} bytes is truncated")))?;
    let manifest: Manifest =
        serde_json::from_slice(body).map_err(|e| bad(format!("manifest: {e}")))?;
    let payload = &bytes[20 + mlen..];
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for e in manifest.tensors {
        let (o, l) = (e.offset as usize, e.len as usize);
        let chunk = payload
            .get(o..o.saturating_add(l))
            .ok_or_else(|| bad(format!("tensor `{}` is truncated", e.name)))?;
        if sha_hex(chunk) != e.sha256 {
            return Err(bad(format!("checksum mismatch for tensor `{}`", e.name)));
        }
        let data: Vec<f64> = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::from_vec(&e.shape, data).map_err(|_| bad(format!("tensor `{}` has wrong length", e.name)))?;
        tensors.push((e.name, t));
    }
    Ok(Checkpoint {
        meta: manifest.meta,
        tensors,
    })
}
