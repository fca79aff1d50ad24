//! Named-tensor container for model checkpoints.
//!
//! Same header discipline as RSD files:
//!
//! ```text
//! "RSDP" | version u32 = 1 | tensor count u32 | meta_len u32 | JSON | payload
//! ```
//!
//! The JSON holds `{"kind", "config", "tensors": [{"name", "shape", "dtype"}]}`
//! and the payload concatenates each tensor's values in directory order,
//! little-endian, row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PARAM_MAGIC: &[u8; 4] = b"RSDP";
pub const PARAM_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            Self::F32(_) => "f32",
            Self::F64(_) => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Directory {
    kind: String,
    config: serde_json::Value,
    tensors: Vec<Entry>,
}

/// A checkpoint: a kind tag, a JSON config and an ordered list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFile {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl ParamFile {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let numel: usize = t.shape.iter().product();
            if numel != t.data.len() {
                return Err(Error::InvariantViolation(format!(
                    "tensor {} has shape {:?} but {} values",
                    t.name,
                    t.shape,
                    t.data.len()
                )));
            }
            entries.push(Entry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: t.data.dtype().to_string(),
            });
        }
        let dir = Directory {
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&dir)
            .map_err(|e| Error::InvariantViolation(format!("directory not serializable: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(PARAM_MAGIC);
        out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("checkpoint shorter than header".into()));
        }
        if &bytes[..4] != PARAM_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {:?}", &bytes[..4])));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        if word(1) != PARAM_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {}", word(1))));
        }
        let count = word(2) as usize;
        let meta_len = word(3) as usize;
        let meta_end = HEADER_LEN
            .checked_add(meta_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("checkpoint directory runs past end of file".into()))?;
        let dir: Directory = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| Error::Format(format!("checkpoint directory: {e}")))?;
        if dir.tensors.len() != count {
            return Err(Error::Format(format!(
                "header says {count} tensors, directory lists {}",
                dir.tensors.len()
            )));
        }
        let mut offset = meta_end;
        let mut tensors = Vec::with_capacity(count);
        for entry in dir.tensors {
            let numel = entry
                .shape
                .iter()
                .try_fold(1usize, |acc, &n| acc.checked_mul(n))
                .ok_or_else(|| Error::Format(format!("tensor {} shape overflows", entry.name)))?;
            let width = match entry.dtype.as_str() {
                "f32" => 4,
                "f64" => 8,
                other => return Err(Error::Format(format!("unknown dtype {other}"))),
            };
            let end = numel
                .checked_mul(width)
                .and_then(|n| n.checked_add(offset))
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Format(format!("tensor {} truncated", entry.name)))?;
            let raw = &bytes[offset..end];
            let data = if width == 4 {
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            } else {
                TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            };
            offset = end;
            tensors.push(NamedTensor {
                name: entry.name,
                shape: entry.shape,
                data,
            });
        }
        if offset != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after last tensor",
                bytes.len() - offset
            )));
        }
        Ok(Self {
            kind: dir.kind,
            config: dir.config,
            tensors,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
