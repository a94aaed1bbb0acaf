//! Named-tensor container, byte-compatible with the safetensors layout:
//! an 8-byte little-endian header length, a JSON header mapping each name
//! to dtype/shape/byte offsets (plus a `__metadata__` map of strings), then
//! the raw little-endian f32 payload.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const METADATA_KEY: &str = "__metadata__";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorFile {
    pub tensors: BTreeMap<String, ArrayD<f32>>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: ArrayD<f32>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<f32>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing tensor {name}")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::CheckpointMismatch(format!("missing metadata entry {key}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        header.insert(METADATA_KEY.into(), serde_json::to_value(&self.metadata).expect("string map"));
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let len = t.len() * 4;
            let e = Entry {
                dtype: "F32".into(),
                shape: t.shape().to_vec(),
                data_offsets: [offset, offset + len],
            };
            header.insert(name.clone(), serde_json::to_value(e).expect("entry"));
            offset += len;
        }
        let mut json = serde_json::to_vec(&header).expect("header");
        while !json.len().is_multiple_of(8) {
            json.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + json.len() + offset);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.tensors.values() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let bad = |msg: String| Error::Format(format!("{origin}: {msg}"));
        if bytes.len() < 8 {
            return Err(Error::Length(format!("{origin}: checkpoint shorter than its header length")));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(8..8usize.saturating_add(n))
            .ok_or_else(|| Error::Length(format!("{origin}: header claims {n} bytes")))?;
        let data = &bytes[8 + n..];
        let header: serde_json::Map<String, serde_json::Value> =
            serde_json::from_slice(body).map_err(|e| bad(format!("header is not JSON: {e}")))?;
        let mut file = TensorFile::new();
        for (name, v) in header {
            if name == METADATA_KEY {
                file.metadata = serde_json::from_value(v).map_err(|e| bad(format!("metadata: {e}")))?;
                continue;
            }
            let e: Entry = serde_json::from_value(v).map_err(|e| bad(format!("tensor {name}: {e}")))?;
            if e.dtype != "F32" {
                return Err(bad(format!("tensor {name} has unsupported dtype {}", e.dtype)));
            }
            let [lo, hi] = e.data_offsets;
            let count: usize = e.shape.iter().product();
            if hi < lo || hi - lo != count * 4 || hi > data.len() {
                return Err(Error::Length(format!("{origin}: tensor {name} has bad offsets {lo}..{hi}")));
            }
            let vals: Vec<f32> = data[lo..hi]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = ArrayD::from_shape_vec(IxDyn(&e.shape), vals).expect("size checked");
            file.tensors.insert(name, t);
        }
        Ok(file)
    }

    /// Writes through a temporary sibling and renames, so an existing file
    /// is never left half-written.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn sample() -> TensorFile {
        let mut f = TensorFile::new();
        f.insert("b", Array::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f32 - 1.5).into_dyn());
        f.insert("a", ArrayD::from_elem(IxDyn(&[4]), 0.25));
        f.metadata.insert("architecture".into(), "{\"latent_dim\":3}".into());
        f
    }

    #[test]
    fn round_trip() {
        let f = sample();
        let bytes = f.to_bytes();
        let n = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        assert_eq!(n % 8, 0);
        assert_eq!(TensorFile::from_bytes(&bytes, "mem").unwrap(), f);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.safetensors");
        sample().write(&p).unwrap();
        assert_eq!(TensorFile::read(&p).unwrap(), sample());
        assert!(!p.with_extension("tmp").exists());
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = sample().to_bytes();
        let err = TensorFile::from_bytes(&bytes[..bytes.len() - 4], "mem").unwrap_err();
        assert!(matches!(err, Error::Length(_)));
        assert!(TensorFile::from_bytes(&bytes[..5], "mem").is_err());
    }

    #[test]
    fn missing_names_are_mismatches() {
        let f = sample();
        assert!(matches!(f.get("zzz"), Err(Error::CheckpointMismatch(_))));
        assert!(matches!(f.meta("config"), Err(Error::CheckpointMismatch(_))));
    }
}
