//! Checkpoint file format. All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "MRTCKPT\0"
//! version      u32      1
//! config_hash  u64
//! n_meta       u32
//!   key_len u32, key (UTF-8), value_len u32, value (UTF-8)    × n_meta
//! n_tensors    u32
//!   name_len u32, name (UTF-8), ndim u32, dims u64 × ndim,
//!   data f32 × Π dims                                         × n_tensors
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"MRTCKPT\0";
pub const VERSION: u32 = 1;

/// Refuse absurd lengths from a corrupt file before allocating.
const MAX_FIELD: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing {0}")]
    Missing(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn from_f64(name: &str, shape: Vec<usize>, data: &[f64]) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape,
            data: data.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&x| f64::from(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub metadata: Vec<(String, String)>,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str, CheckpointError> {
        self.meta(key)
            .ok_or_else(|| CheckpointError::Missing(format!("metadata key '{key}'")))
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn require_tensor(&self, name: &str) -> Result<&NamedTensor, CheckpointError> {
        self.tensor(name)
            .ok_or_else(|| CheckpointError::Missing(format!("tensor '{name}'")))
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash.to_le_bytes())?;
        write_len(&mut w, self.metadata.len())?;
        for (k, v) in &self.metadata {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        write_len(&mut w, self.tensors.len())?;
        for t in &self.tensors {
            write_str(&mut w, &t.name)?;
            write_len(&mut w, t.shape.len())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for x in &t.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let config_hash = read_u64(&mut r)?;
        let n_meta = read_len(&mut r)?;
        let mut metadata = Vec::with_capacity(n_meta.min(64));
        for _ in 0..n_meta {
            metadata.push((read_str(&mut r)?, read_str(&mut r)?));
        }
        let n_tensors = read_len(&mut r)?;
        let mut tensors = Vec::with_capacity(n_tensors.min(64));
        for _ in 0..n_tensors {
            let name = read_str(&mut r)?;
            let ndim = read_len(&mut r)?;
            let mut shape = Vec::with_capacity(ndim.min(8));
            let mut count: u64 = 1;
            for _ in 0..ndim {
                let d = read_u64(&mut r)?;
                count = count
                    .checked_mul(d)
                    .filter(|&c| c <= MAX_FIELD)
                    .ok_or_else(|| CheckpointError::Malformed(format!("tensor '{name}' too large")))?;
                shape.push(d as usize);
            }
            let mut bytes = vec![0u8; count as usize * 4];
            r.read_exact(&mut bytes)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Self {
            config_hash,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(io::BufReader::new(file))
    }
}

fn write_len(w: &mut impl Write, n: usize) -> io::Result<()> {
    let n = u32::try_from(n).map_err(|_| io::Error::other("length exceeds u32"))?;
    w.write_all(&n.to_le_bytes())
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    write_len(w, s.len())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(r: &mut impl Read) -> io::Result<usize> {
    Ok(read_u32(r)? as usize)
}

fn read_str(r: &mut impl Read) -> Result<String, CheckpointError> {
    let n = read_len(r)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| CheckpointError::Malformed("non-UTF-8 string".into()))
}
