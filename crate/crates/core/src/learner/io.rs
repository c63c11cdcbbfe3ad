//! Model file layout (little-endian):
//!
//! `SKLMODL1`, u32 schema version, u32 metadata length + JSON metadata,
//! u32 parameter count, then per parameter: u32 name length, UTF-8 name,
//! u32 rank, rank x u32 dims, f32 data.

use std::path::Path;

use super::layers::Parameters;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"SKLMODL1";
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub metadata: serde_json::Value,
    pub params: Vec<NamedTensor>,
}

impl ModelFile {
    pub fn new(metadata: serde_json::Value) -> Self {
        ModelFile {
            metadata,
            params: Vec::new(),
        }
    }

    pub fn push<M: Parameters<f32>>(&mut self, prefix: &str, model: &M) {
        let mut views = Vec::new();
        model.visit(prefix, &mut views);
        for v in views {
            self.params.push(NamedTensor {
                name: v.name,
                shape: v.shape,
                data: v.data.to_vec(),
            });
        }
    }

    /// Copies every parameter named under `prefix` into `model`, checking
    /// names and shapes.
    pub fn restore<M: Parameters<f32>>(&self, prefix: &str, model: &mut M) -> Result<()> {
        let mut views = Vec::new();
        model.visit(prefix, &mut views);
        let wanted: Vec<(String, Vec<usize>)> = views.into_iter().map(|v| (v.name, v.shape)).collect();
        let mut sources = Vec::with_capacity(wanted.len());
        for (name, shape) in &wanted {
            let t = self
                .params
                .iter()
                .find(|p| &p.name == name)
                .ok_or_else(|| Error::ShapeMismatch(format!("model file lacks parameter {name}")))?;
            if &t.shape != shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: file shape {:?}, model shape {shape:?}",
                    t.shape
                )));
            }
            sources.push(&t.data);
        }
        for (dst, src) in model.params_mut().into_iter().zip(sources) {
            dst.copy_from_slice(src);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_SCHEMA_VERSION.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).expect("json value serializes");
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for d in &p.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, at: 0, path };
        if r.take(8)? != MODEL_MAGIC {
            return Err(r.corrupt(0, "bad magic, expected SKLMODL1"));
        }
        let version = r.u32()?;
        if version != MODEL_SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: MODEL_SCHEMA_VERSION,
            });
        }
        let meta_len = r.u32()? as usize;
        let meta_at = r.at;
        let metadata = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| r.corrupt(meta_at, &format!("metadata: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let at = r.at;
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.corrupt(at, "parameter name is not UTF-8"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(4 * len)?;
            let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            params.push(NamedTensor { name, shape, data });
        }
        if r.at != bytes.len() {
            return Err(r.corrupt(r.at, "trailing bytes after last parameter"));
        }
        Ok(ModelFile { metadata, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.at + n) as u64,
                actual: self.bytes.len() as u64,
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn corrupt(&self, offset: usize, reason: &str) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            reason: reason.to_string(),
        }
    }
}
