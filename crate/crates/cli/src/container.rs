//! Tensor container: `RTC1` magic, little-endian `u32` header length, a JSON
//! header describing the arrays, then the raw little-endian payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MAGIC: &[u8; 4] = b"RTC1";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl ArrayData {
    fn dtype(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::I64(_) => "i64",
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
        }
    }

    fn byte_len(&self) -> usize {
        self.len() * element_size(self.dtype()).unwrap_or(0)
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    /// Values widened to `f64`; this is where on-disk `f32` enters memory.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
            ArrayData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

fn element_size(dtype: &str) -> Result<usize> {
    Ok(match dtype {
        "f32" => 4,
        "f64" | "i64" => 8,
        other => bail!("unsupported dtype '{other}'"),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    arrays: Vec<ArrayEntry>,
    meta: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorContainer {
    pub arrays: Vec<Array>,
    pub meta: Value,
}

impl TensorContainer {
    pub fn new(meta: Value) -> Self {
        Self {
            arrays: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: ArrayData) -> Result<()> {
        ensure!(
            shape.iter().product::<usize>() == data.len(),
            "array '{name}': shape {shape:?} does not match {} values",
            data.len()
        );
        ensure!(self.get(name).is_none(), "duplicate array '{name}'");
        self.arrays.push(Array {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Array> {
        self.get(name).with_context(|| format!("container has no array '{name}'"))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.arrays.len());
        let mut offset = 0;
        for a in &self.arrays {
            entries.push(ArrayEntry {
                name: a.name.clone(),
                dtype: a.data.dtype().to_string(),
                shape: a.shape.clone(),
                offset,
            });
            offset += a.data.byte_len();
        }
        let header = serde_json::to_vec(&Header {
            arrays: entries,
            meta: self.meta.clone(),
        })?;
        let header_len = u32::try_from(header.len()).context("header too large")?;
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            a.data.write_le(&mut out);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(bytes.len() >= 8 && &bytes[..4] == MAGIC, "not a tensor container (bad magic)");
        let header_len = u32::from_le_bytes(bytes[4..8].try_into()?) as usize;
        ensure!(bytes.len() >= 8 + header_len, "truncated container header");
        let header: Header =
            serde_json::from_slice(&bytes[8..8 + header_len]).context("malformed container header")?;
        let payload = &bytes[8 + header_len..];
        let mut spans: Vec<(usize, usize)> = Vec::new();
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for e in header.arrays {
            let count: usize = e.shape.iter().product();
            let size = element_size(&e.dtype)?;
            let end = e
                .offset
                .checked_add(count * size)
                .with_context(|| format!("array '{}' extent overflows", e.name))?;
            ensure!(end <= payload.len(), "array '{}' extends past the payload", e.name);
            ensure!(
                spans.iter().all(|&(s, t)| end <= s || e.offset >= t || count == 0),
                "array '{}' overlaps another array",
                e.name
            );
            spans.push((e.offset, end));
            let raw = &payload[e.offset..end];
            let data = match e.dtype.as_str() {
                "f32" => ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                "f64" => ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
                _ => ArrayData::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            arrays.push(Array {
                name: e.name,
                shape: e.shape,
                data,
            });
        }
        Ok(Self {
            arrays,
            meta: header.meta,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("cannot parse {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}
