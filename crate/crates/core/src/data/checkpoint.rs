// SPDX-License-Identifier: MIT OR Apache-2.0

//! The `MCHK` tensor container.
//!
//! Byte layout, all integers little-endian:
//!
//! | offset      | size | content                                  |
//! |-------------|------|------------------------------------------|
//! | 0           | 4    | magic `b"MCHK"`                          |
//! | 4           | 4    | format version, `u32` (currently 1)      |
//! | 8           | 8    | header length `H` in bytes, `u64`        |
//! | 16          | H    | UTF-8 JSON header                        |
//! | 16 + H      | ...  | payload of little-endian `f32` values    |
//!
//! The header is `{"metadata": <object>, "tensors": {name: {"dtype":
//! "f32", "shape": [...], "offset": <byte offset into payload>}}}` with
//! keys in sorted order. Tensors are written contiguously in name order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MCHK";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: expected MCHK")]
    BadMagic,
    #[error("unsupported format version {found} (expected {FORMAT_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("truncated: {0}")]
    Truncated(String),
    #[error("overlapping tensors {0} and {1}")]
    Overlap(String, String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported dtype {dtype} for tensor {name}")]
    Dtype { name: String, dtype: String },
    #[error("missing tensor {0}")]
    MissingTensor(String),
}

impl CheckpointError {
    /// Stable machine-readable code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::BadMagic => "bad_magic",
            CheckpointError::VersionMismatch { .. } => "version_mismatch",
            CheckpointError::Truncated(_) => "truncated",
            CheckpointError::Overlap(..) => "overlap",
            CheckpointError::Header(_) => "bad_header",
            CheckpointError::Dtype { .. } => "bad_dtype",
            CheckpointError::MissingTensor(_) => "missing_tensor",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TensorEntry {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    metadata: Value,
    tensors: BTreeMap<String, TensorEntry>,
}

/// Named `f32` tensors plus free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new(metadata: Value) -> Self {
        Self {
            metadata,
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()).into())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = BTreeMap::new();
        let mut offset = 0u64;
        for (name, t) in &self.tensors {
            entries.insert(
                name.clone(),
                TensorEntry {
                    dtype: "f32".into(),
                    shape: t.shape().to_vec(),
                    offset,
                },
            );
            offset += 4 * t.numel() as u64;
        }
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < PREAMBLE {
            return Err(CheckpointError::Truncated("preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch { found: version });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let payload_start = PREAMBLE
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| CheckpointError::Truncated("header extends past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
        let payload = &bytes[payload_start..];

        let mut spans: Vec<(u64, u64, &str)> = Vec::with_capacity(header.tensors.len());
        for (name, e) in &header.tensors {
            if e.dtype != "f32" {
                return Err(CheckpointError::Dtype {
                    name: name.clone(),
                    dtype: e.dtype.clone(),
                });
            }
            if e.shape.is_empty() || e.shape.contains(&0) {
                return Err(CheckpointError::Header(format!(
                    "tensor {name} has invalid shape {:?}",
                    e.shape
                )));
            }
            let len = 4 * e.shape.iter().product::<usize>() as u64;
            let end = e.offset.checked_add(len).ok_or_else(|| {
                CheckpointError::Header(format!("tensor {name} offset overflows"))
            })?;
            if end > payload.len() as u64 {
                return Err(CheckpointError::Truncated(format!(
                    "tensor {name} ends at byte {end} of a {}-byte payload",
                    payload.len()
                )));
            }
            spans.push((e.offset, end, name));
        }
        spans.sort();
        for pair in spans.windows(2) {
            if pair[1].0 < pair[0].1 {
                return Err(CheckpointError::Overlap(
                    pair[0].2.to_string(),
                    pair[1].2.to_string(),
                ));
            }
        }

        let mut tensors = BTreeMap::new();
        for (name, e) in header.tensors {
            let start = e.offset as usize;
            let numel: usize = e.shape.iter().product();
            let data = payload[start..start + 4 * numel]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(e.shape, data).map_err(|err| CheckpointError::Header(err.to_string()))?;
            tensors.insert(name, t);
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    /// Write to `path`. The file is created fresh; existing files are
    /// replaced atomically via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }

    /// String metadata field, if present.
    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).and_then(Value::as_str)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
