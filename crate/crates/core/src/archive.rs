//! Named-tensor archive.
//!
//! Layout: the magic `NTARCH01`, a little-endian `u64` header length, a JSON
//! header `{"tensors": [{name, shape, dtype, offset, length}], "metadata": {..}}`,
//! then the tensor data region. Tensors are row-major little-endian; `offset`
//! and `length` are byte positions relative to the start of the data region.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NTARCH01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Values are held as `f64`; `F32` tensors only ever contain values exactly
/// representable in `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: DType,
    offset: u64,
    length: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
    metadata: Map<String, Value>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub tensors: Vec<Tensor>,
    pub metadata: Map<String, Value>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor. `F32` values are rounded to single precision.
    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], dtype: DType, values: &[f64]) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Archive(format!("duplicate tensor {name}")));
        }
        let numel: usize = shape.iter().product();
        if numel != values.len() {
            return Err(Error::Archive(format!(
                "tensor {name} has shape {shape:?} but {} values",
                values.len()
            )));
        }
        let values = match dtype {
            DType::F64 => values.to_vec(),
            DType::F32 => values.iter().map(|&v| v as f32 as f64).collect(),
        };
        self.tensors.push(Tensor {
            name,
            shape: shape.to_vec(),
            dtype,
            values,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::Archive(format!("tensor {name} missing from archive")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut data = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let offset = data.len() as u64;
            match t.dtype {
                DType::F32 => t.values.iter().for_each(|&v| data.extend_from_slice(&(v as f32).to_le_bytes())),
                DType::F64 => t.values.iter().for_each(|&v| data.extend_from_slice(&v.to_le_bytes())),
            }
            entries.push(Entry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: t.dtype,
                offset,
                length: data.len() as u64 - offset,
            });
        }
        let header = serde_json::to_vec(&Header {
            tensors: entries,
            metadata: self.metadata.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Archive("not a tensor archive (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Archive("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| Error::Archive(format!("malformed header: {e}")))?;
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let numel: usize = e.shape.iter().product();
            let width = e.dtype.width();
            let (start, len) = (e.offset as usize, e.length as usize);
            if len != numel * width || start.checked_add(len).is_none_or(|end| end > data.len()) {
                return Err(Error::Archive(format!("tensor {} has an inconsistent extent", e.name)));
            }
            let raw = &data[start..start + len];
            let values = match e.dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
            };
            tensors.push(Tensor {
                name: e.name,
                shape: e.shape,
                dtype: e.dtype,
                values,
            });
        }
        Ok(Archive {
            tensors,
            metadata: header.metadata,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_bytes(&bytes)
    }
}
