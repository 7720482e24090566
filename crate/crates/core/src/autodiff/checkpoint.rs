//! Parameter checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "WSEPCKPT"
//! version  u32      CHECKPOINT_VERSION
//! hlen     u32      length of the JSON header
//! header   hlen     {"version", "meta", "params": [{"name", "shape"}]}
//! values   f64 LE   row-major values of every parameter, in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Array, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSEPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint parameters do not match model: {0}")]
    Mismatch(String),
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: serde_json::Value,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

/// Decoded checkpoint: free-form metadata plus named parameter arrays.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub params: Vec<(String, Array)>,
}

impl Checkpoint {
    pub fn from_store(meta: serde_json::Value, store: &ParamStore) -> Self {
        Self { meta, params: store.named_values().map(|(n, v)| (n.to_string(), v.clone())).collect() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            meta: self.meta.clone(),
            params: self
                .params
                .iter()
                .map(|(name, v)| Entry { name: name.clone(), shape: v.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.iter().map(|p| p.1.len()).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, v) in &self.params {
            for x in v.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 {
            return Err(CheckpointError::Truncated);
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let header_end = 16usize.checked_add(hlen).ok_or(CheckpointError::Truncated)?;
        let header_bytes = bytes.get(16..header_end).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(header_bytes)?;
        if header.version != version {
            return Err(CheckpointError::Version(header.version));
        }
        let mut pos = header_end;
        let mut params = Vec::with_capacity(header.params.len());
        for e in header.params {
            let n: usize = e.shape.iter().product();
            let end = pos + 8 * n;
            let raw = bytes.get(pos..end).ok_or(CheckpointError::Truncated)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let arr = Array::new(&e.shape, data).map_err(|err| CheckpointError::Mismatch(err.to_string()))?;
            params.push((e.name, arr));
            pos = end;
        }
        if pos != bytes.len() {
            return Err(CheckpointError::Mismatch(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Self { meta: header.meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn apply_to(&self, store: &mut ParamStore) -> Result<(), CheckpointError> {
        store.load_named(&self.params).map_err(|e| CheckpointError::Mismatch(e.to_string()))
    }
}
