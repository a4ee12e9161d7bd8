//! Binary tensor container shared by backbone weights and retaining heads.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! [0..4)        magic b"RKV1"
//! [4..12)       u64 header length H
//! [12..12+H)    UTF-8 JSON header
//! [12+H..)      raw tensor data
//! ```
//!
//! The header maps each tensor name to `{"dtype": "f32"|"f64", "shape": [..],
//! "byte_offset": n}` where `byte_offset` counts from the start of the data
//! section. An optional `"__metadata__"` entry holds a string-to-string map.
//! Keys are written in sorted order and tensors are laid out in the same
//! order, so saving the same content twice produces identical bytes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::{Mat, Precision, Real};

pub const MAGIC: &[u8; 4] = b"RKV1";
const METADATA_KEY: &str = "__metadata__";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    byte_offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub dtype: Precision,
    pub shape: Vec<usize>,
    /// Values widened to f64; narrowing back to f32 is exact.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    tensors: BTreeMap<String, StoredTensor>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_mat<T: Real>(&mut self, name: &str, m: &Mat<T>) {
        self.tensors.insert(
            name.to_string(),
            StoredTensor {
                dtype: T::PRECISION,
                shape: vec![m.rows(), m.cols()],
                values: m.data().iter().map(|x| x.f64()).collect(),
            },
        );
    }

    pub fn insert_vec<T: Real>(&mut self, name: &str, v: &[T]) {
        self.tensors.insert(
            name.to_string(),
            StoredTensor {
                dtype: T::PRECISION,
                shape: vec![v.len()],
                values: v.iter().map(|x| x.f64()).collect(),
            },
        );
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&StoredTensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name:?}")))
    }

    pub fn mat<T: Real>(&self, name: &str, rows: usize, cols: usize) -> Result<Mat<T>> {
        let t = self.get(name)?;
        if t.shape != [rows, cols] {
            return Err(Error::shape(format!(
                "tensor {name:?} has shape {:?}, expected [{rows}, {cols}]",
                t.shape
            )));
        }
        Mat::from_vec(rows, cols, t.values.iter().map(|&x| T::of(x)).collect())
    }

    pub fn vec<T: Real>(&self, name: &str, len: usize) -> Result<Vec<T>> {
        let t = self.get(name)?;
        if t.shape != [len] {
            return Err(Error::shape(format!(
                "tensor {name:?} has shape {:?}, expected [{len}]",
                t.shape
            )));
        }
        Ok(t.values.iter().map(|&x| T::of(x)).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = serde_json::Map::new();
        let mut data = Vec::new();
        if !self.metadata.is_empty() {
            header.insert(METADATA_KEY.into(), serde_json::to_value(&self.metadata)?);
        }
        for (name, t) in &self.tensors {
            let entry = Entry {
                dtype: t.dtype.dtype().into(),
                shape: t.shape.clone(),
                byte_offset: data.len() as u64,
            };
            header.insert(name.clone(), serde_json::to_value(entry)?);
            match t.dtype {
                Precision::Single => t.values.iter().for_each(|&v| (v as f32).write_le(&mut data)),
                Precision::Double => t.values.iter().for_each(|&v| v.write_le(&mut data)),
            }
        }
        let header = serde_json::to_vec(&Value::Object(header))?;
        let mut out = Vec::with_capacity(12 + header.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("missing RKV1 magic".into()));
        }
        let mut len = [0u8; 8];
        len.copy_from_slice(&bytes[4..12]);
        let hlen = u64::from_le_bytes(len) as usize;
        let body = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Format("header length exceeds file size".into()))?;
        let header: serde_json::Map<String, Value> = serde_json::from_slice(&bytes[12..body])?;
        let data = &bytes[body..];
        let mut out = Container::new();
        for (name, value) in header {
            if name == METADATA_KEY {
                out.metadata = serde_json::from_value(value)?;
                continue;
            }
            let entry: Entry = serde_json::from_value(value)?;
            let dtype: Precision = entry
                .dtype
                .parse()
                .map_err(|e: String| Error::Format(format!("{name}: {e}")))?;
            let count: usize = entry.shape.iter().product();
            let width = match dtype {
                Precision::Single => 4,
                Precision::Double => 8,
            };
            let start = entry.byte_offset as usize;
            let end = start + count * width;
            if end > data.len() {
                return Err(Error::Format(format!("tensor {name:?} runs past end of data")));
            }
            let raw = &data[start..end];
            let values = match dtype {
                Precision::Single => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
                Precision::Double => raw.chunks_exact(8).map(f64::read_le).collect(),
            };
            out.tensors.insert(
                name,
                StoredTensor {
                    dtype,
                    shape: entry.shape,
                    values,
                },
            );
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
