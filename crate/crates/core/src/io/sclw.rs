//! SCLW weights files.
//!
//! ```text
//! 0   "SCLW"
//! 4   u32 LE format version
//! 8   u64 LE manifest byte length
//! 16  manifest: UTF-8 JSON array of {name, shape, dtype, byte_offset, trainable}
//! ..  zero padding to a multiple of 64
//! P   payload: f32 LE tensors, each starting 64-byte aligned
//! ```
//!
//! `byte_offset` is relative to the payload start `P`. The file ends exactly
//! where the last tensor ends.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_err, read_file, write_file};
use crate::error::Result;
use crate::store::{Provenance, WeightStore};
use crate::tensor::Tensor;

pub const SCLW_MAGIC: &[u8; 4] = b"SCLW";
pub const SCLW_VERSION: u32 = 1;
const HEADER: usize = 16;
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
    #[serde(default = "yes")]
    pub trainable: bool,
}

fn yes() -> bool {
    true
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Serialized form of `store`. Deterministic: equal stores give equal bytes.
pub fn sclw_bytes(store: &WeightStore<f32>) -> Vec<u8> {
    let mut manifest = Vec::with_capacity(store.len());
    let mut offset = 0usize;
    for (name, e) in store.iter() {
        manifest.push(ManifestEntry {
            name: name.to_string(),
            shape: e.tensor.shape().to_vec(),
            dtype: "f32".into(),
            byte_offset: offset as u64,
            trainable: e.trainable,
        });
        offset = align(offset + 4 * e.tensor.len());
    }
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let payload_start = align(HEADER + json.len());
    let end = manifest
        .last()
        .map_or(0, |m| m.byte_offset as usize + 4 * m.shape.iter().product::<usize>());
    let mut out = Vec::with_capacity(payload_start + end);
    out.extend_from_slice(SCLW_MAGIC);
    out.extend_from_slice(&SCLW_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.resize(payload_start, 0);
    for ((_, e), m) in store.iter().zip(&manifest) {
        out.resize(payload_start + m.byte_offset as usize, 0);
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_sclw(path: &Path, store: &WeightStore<f32>) -> Result<()> {
    write_file(path, &sclw_bytes(store))
}

pub fn read_sclw(path: &Path) -> Result<WeightStore<f32>> {
    parse(path, &read_file(path)?)
}

fn parse(path: &Path, bytes: &[u8]) -> Result<WeightStore<f32>> {
    let err = |off: usize, msg: String| format_err(path, off as u64, msg);
    if bytes.len() < HEADER {
        return Err(err(
            bytes.len(),
            format!("truncated header ({} of {HEADER} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != SCLW_MAGIC {
        return Err(err(
            0,
            format!(
                "bad magic {:?}, expected \"SCLW\"",
                String::from_utf8_lossy(&bytes[..4])
            ),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != SCLW_VERSION {
        return Err(err(
            4,
            format!("unsupported version {version}, this build reads {SCLW_VERSION}"),
        ));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let mend = HEADER
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err(8, format!("manifest length {mlen} exceeds file size {}", bytes.len())))?;
    let manifest: Vec<ManifestEntry> =
        serde_json::from_slice(&bytes[HEADER..mend]).map_err(|e| err(HEADER, format!("manifest: {e}")))?;
    let payload = align(mend);
    let mut store = WeightStore::new(Provenance::Imported);
    let mut cursor = 0usize;
    for m in &manifest {
        if m.dtype != "f32" {
            return Err(err(HEADER, format!("{}: unsupported dtype {:?}", m.name, m.dtype)));
        }
        let off = m.byte_offset as usize;
        if !off.is_multiple_of(ALIGN) || off < cursor {
            return Err(err(
                payload + off,
                format!("{}: offset {off} is misaligned or overlaps the previous tensor", m.name),
            ));
        }
        let n: usize = m.shape.iter().product();
        let start = payload + off;
        let end = start + 4 * n;
        if end > bytes.len() {
            return Err(err(
                bytes.len(),
                format!("{}: payload truncated, needs bytes {start}..{end}", m.name),
            ));
        }
        let data = bytes[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let t = Tensor::new(&m.shape, data).map_err(|e| err(HEADER, format!("{}: {e}", m.name)))?;
        store
            .insert(m.name.clone(), t, m.trainable)
            .map_err(|e| err(HEADER, e.to_string()))?;
        cursor = off + 4 * n;
    }
    let expected = payload + cursor;
    if bytes.len() != expected {
        return Err(err(
            expected.min(bytes.len()),
            format!("file is {} bytes, manifest declares {expected}", bytes.len()),
        ));
    }
    Ok(store)
}
