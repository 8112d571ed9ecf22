//! Versioned binary container: a kind tag, a JSON metadata block and named
//! `f64` tensors. Used for model checkpoints and synthesis records.
//!
//! Layout (little endian):
//! ```text
//! b"PVCK"  u16 version  u16 reserved
//! u32 kind_len   kind (UTF-8)
//! u64 meta_len   metadata (UTF-8 JSON)
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 rows, u32 cols, rows*cols f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"PVCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new(kind: impl Into<String>, metadata: &impl Serialize) -> Result<Self> {
        Ok(Self {
            kind: kind.into(),
            metadata: serde_json::to_value(metadata)?,
            tensors: Vec::new(),
        })
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn metadata_as<T: DeserializeOwned>(&self) -> Result<T> {
        Ok(serde_json::from_value(self.metadata.clone())?)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&0u16.to_le_bytes())?;
        w.write_all(&(self.kind.len() as u32).to_le_bytes())?;
        w.write_all(self.kind.as_bytes())?;
        let meta = serde_json::to_vec(&self.metadata)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u32).to_le_bytes())?;
            w.write_all(&(t.cols() as u32).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, origin: &Path) -> Result<Self> {
        let bad = |m: String| Error::Container {
            path: origin.to_path_buf(),
            message: m,
        };
        let mut head = [0u8; 8];
        r.read_exact(&mut head).map_err(|e| bad(e.to_string()))?;
        if &head[..4] != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let read_bytes = |n: usize, r: &mut dyn Read| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|e| bad(e.to_string()))?;
            Ok(buf)
        };
        let u32_le = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap()) as usize;

        let kind_len = u32_le(&read_bytes(4, &mut r)?);
        let kind = String::from_utf8(read_bytes(kind_len, &mut r)?).map_err(|_| bad("kind is not UTF-8".into()))?;
        let meta_len = u64::from_le_bytes(read_bytes(8, &mut r)?.try_into().unwrap()) as usize;
        let metadata = serde_json::from_slice(&read_bytes(meta_len, &mut r)?)?;
        let count = u32_le(&read_bytes(4, &mut r)?);
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_le(&read_bytes(4, &mut r)?);
            let name =
                String::from_utf8(read_bytes(name_len, &mut r)?).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let rows = u32_le(&read_bytes(4, &mut r)?);
            let cols = u32_le(&read_bytes(4, &mut r)?);
            let raw = read_bytes(rows * cols * 8, &mut r)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            tensors.push((name, Tensor::from_vec(rows, cols, data)));
        }
        Ok(Self {
            kind,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f), path)
    }

    /// Loads and checks the kind tag.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::load(path)?;
        if c.kind != kind {
            return Err(Error::Container {
                path: path.to_path_buf(),
                message: format!("expected a {kind:?} container, found {:?}", c.kind),
            });
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut c = Container::new("test", &serde_json::json!({"a": 1, "b": [1.5, 2.5]})).unwrap();
        c.push("w", Tensor::from_vec(2, 2, vec![1.0, -2.0, 3.25, f64::MIN_POSITIVE]));
        c.push("empty", Tensor::zeros(0, 3));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let back = Container::read_from(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let mut c = Container::new("test", &serde_json::json!({})).unwrap();
        c.push("w", Tensor::zeros(4, 4));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Container::read_from(&buf[..], Path::new("mem")).is_err());
    }
}
