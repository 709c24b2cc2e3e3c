//! Binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        4 bytes  "FFCK"
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON, always carrying "format_version"
//! tensor_count u32
//! per tensor:
//!   name_len   u32, name bytes (UTF-8)
//!   rank       u32, then rank × u64 dimensions
//!   data       product(dims) × f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FFCK";
pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Map<String, Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(mut header: Map<String, Value>, tensors: Vec<(String, Tensor)>) -> Self {
        header.insert("format_version".into(), Value::from(FORMAT_VERSION));
        Self { header, tensors }
    }

    pub fn header_str(&self, key: &str) -> Result<&str> {
        self.header
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("header field '{key}' missing or not a string")))
    }

    pub fn header_usize(&self, key: &str) -> Result<usize> {
        self.header
            .get(key)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| Error::Checkpoint(format!("header field '{key}' missing or not an integer")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' missing")))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header).expect("JSON map serializes");
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let header_len = read_u32(&mut r).map_err(bad)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(bad)?;
        let header: Map<String, Value> =
            serde_json::from_slice(&header).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        match header.get("format_version").and_then(Value::as_u64) {
            Some(FORMAT_VERSION) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported format_version {other:?}, expected {FORMAT_VERSION}"
                )))
            }
        }
        let count = read_u32(&mut r).map_err(bad)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r).map_err(bad)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(bad)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rank = read_u32(&mut r).map_err(bad)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(bad)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(bad)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Rounds every value through `f32`, matching what a checkpoint stores.
pub fn quantize_f32(values: &mut [f64]) {
    values.iter_mut().for_each(|v| *v = *v as f32 as f64);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_in_memory() {
        let mut header = Map::new();
        header.insert("arch".into(), "test".into());
        let ck = Checkpoint::new(
            header,
            vec![
                (
                    "a".into(),
                    Tensor::new(vec![2, 2], vec![1.0, -2.5, 0.125, 3.0]).unwrap(),
                ),
                ("b".into(), Tensor::vector(vec![0.5])),
            ],
        );
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.header_usize("format_version").unwrap(), 1);
    }

    #[test]
    fn rejects_other_versions() {
        let mut ck = Checkpoint::new(Map::new(), vec![]);
        ck.header.insert("format_version".into(), Value::from(99));
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let err = Checkpoint::read_from(buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("format_version"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::read_from(&b"nope"[..]).is_err());
        assert!(Checkpoint::read_from(&b"FFCK\x05\x00"[..]).is_err());
    }
}
