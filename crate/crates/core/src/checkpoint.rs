//! Checkpoints: a JSON manifest next to one flat little-endian `f64` blob.
//!
//! ```text
//! <dir>/manifest.json   {"version":1,"dtype":"f64","blob":"tensors.bin",
//!                        "tensors":[{"path":..,"shape":[..],"offset":..,"len":..}],
//!                        "metadata":{..}}
//! <dir>/tensors.bin     row-major values, offsets in bytes
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "tensors.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub path: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: u64,
    /// Element count.
    pub len: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub dtype: String,
    pub blob: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Named tensors plus free-form metadata, as read from or written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
    pub metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(p, _)| p == path).map(|(_, t)| t)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (path, t) in &self.tensors {
            entries.push(TensorEntry {
                path: path.clone(),
                shape: t.shape().to_vec(),
                offset: blob.len() as u64,
                len: t.len() as u64,
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            dtype: "f64".into(),
            blob: BLOB_FILE.into(),
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        fs::write(dir.join(BLOB_FILE), blob)?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                &manifest_path,
                format!("unsupported checkpoint version {}", manifest.version),
            ));
        }
        if manifest.dtype != "f64" {
            return Err(Error::format(&manifest_path, format!("unsupported dtype {}", manifest.dtype)));
        }
        let blob_path = dir.join(&manifest.blob);
        let blob = fs::read(&blob_path)?;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            let start = e.offset as usize;
            let end = start + 8 * e.len as usize;
            if end > blob.len() || e.shape.iter().product::<usize>() != e.len as usize {
                return Err(Error::format(&blob_path, format!("bad extent for {}", e.path)));
            }
            let data = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push((e.path.clone(), Tensor::new(e.shape.clone(), data)?));
        }
        Ok(Self {
            tensors,
            metadata: manifest.metadata,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint {
            tensors: vec![
                ("a/w".into(), Tensor::new(vec![2, 2], vec![1.0, -0.0, 1e-300, f64::MAX]).unwrap()),
                ("b".into(), Tensor::scalar(-3.0)),
            ],
            metadata: serde_json::json!({"note": "x"}),
        };
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("a/w").unwrap().data()[1].to_bits(), (-0.0f64).to_bits());
    }

    #[test]
    fn rejects_unknown_version() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint {
            tensors: vec![],
            metadata: serde_json::Value::Null,
        };
        ck.save(dir.path()).unwrap();
        let p = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("\"version\": 1", "\"version\": 9");
        fs::write(&p, text).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Format { .. })));
    }
}
