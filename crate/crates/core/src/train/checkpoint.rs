//! Binary checkpoint container.
//!
//! Layout: magic `ABTCKPT1`, `u32` LE header length, JSON header, the
//! tensors as consecutive little-endian `f64` blobs, and a `u32` LE CRC32
//! of everything before it.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunSnapshot, StepMetrics};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"ABTCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob section, in `f64` elements.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub code_version: String,
    pub config: RunSnapshot,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: u64,
    /// Saved before the end of an epoch; such checkpoints cannot resume training.
    pub mid_epoch: bool,
    pub seed: u64,
    pub metrics: Option<StepMetrics>,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    tensors: Vec<Tensor>,
}

impl Checkpoint {
    /// Builds a checkpoint; the header's tensor directory is filled in from `tensors`.
    pub fn new(mut header: CheckpointHeader, named: Vec<(String, Tensor)>) -> Self {
        let mut offset = 0u64;
        header.tensors.clear();
        let mut tensors = Vec::with_capacity(named.len());
        for (name, t) in named {
            header.tensors.push(TensorEntry { name, shape: t.shape().to_vec(), offset });
            offset += t.numel() as u64;
            tensors.push(t);
        }
        Self { header, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.header.tensors.iter().position(|e| e.name == name).map(|i| &self.tensors[i])
    }

    /// Tensors whose names start with `prefix`, keyed by the remainder.
    pub fn tensors_with_prefix(&self, prefix: &str) -> HashMap<String, Tensor> {
        self.header
            .tensors
            .iter()
            .zip(&self.tensors)
            .filter_map(|(e, t)| e.name.strip_prefix(prefix).map(|rest| (rest.to_string(), t.clone())))
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let n_values: usize = self.tensors.iter().map(Tensor::numel).sum();
        let mut out = Vec::with_capacity(8 + 4 + header.len() + 8 * n_values + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |why: &str| Error::CorruptCheckpoint(why.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let crc = u32::from_le_bytes(trailer.try_into().expect("four bytes"));
        if crc32fast::hash(body) != crc {
            return Err(corrupt("CRC mismatch (truncated or modified file)"));
        }
        let header_len = u32::from_le_bytes(body[8..12].try_into().expect("four bytes")) as usize;
        let header_bytes = body.get(12..12 + header_len).ok_or_else(|| corrupt("header runs past end of file"))?;
        // Check the version before the typed parse so newer layouts fail cleanly.
        let raw: serde_json::Value = serde_json::from_slice(header_bytes).map_err(|e| corrupt(&format!("header: {e}")))?;
        let found = raw.get("format_version").and_then(serde_json::Value::as_u64).ok_or_else(|| corrupt("header lacks format_version"))?;
        if found != u64::from(FORMAT_VERSION) {
            return Err(Error::IncompatibleCheckpoint { found: found as u32, expected: FORMAT_VERSION });
        }
        let header: CheckpointHeader = serde_json::from_value(raw).map_err(|e| corrupt(&format!("header: {e}")))?;
        let blobs = &body[12 + header_len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected_offset = 0u64;
        for e in &header.tensors {
            if e.offset != expected_offset {
                return Err(corrupt(&format!("tensor `{}` has a non-contiguous offset", e.name)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize * 8;
            let chunk = blobs.get(start..start + n * 8).ok_or_else(|| corrupt(&format!("tensor `{}` runs past end of file", e.name)))?;
            let data = chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes"))).collect();
            tensors.push(Tensor::from_vec(&e.shape, data));
            expected_offset += n as u64;
        }
        if expected_offset as usize * 8 != blobs.len() {
            return Err(corrupt("trailing bytes after tensor data"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Short content hash of a checkpoint file, recorded next to exported embeddings.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    Ok(crate::provenance::digest_hex(&std::fs::read(path)?))
}
