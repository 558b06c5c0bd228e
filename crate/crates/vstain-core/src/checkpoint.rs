//! Versioned checkpoint container.
//!
//! Layout (little-endian): magic `"VSCK"`, version `u16`, metadata
//! count `u32` then `key_len u16, key, val_len u32, val` pairs, tensor
//! count `u32` then per tensor `name_len u16, name, ndim u8,
//! dims u32..., payload f32..., checksum u64`. The checksum is the
//! truncated SHA-256 of the payload bytes and is verified on load.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nn::ParamVisit;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated checkpoint stream")]
    Truncated,
    #[error("checksum mismatch in tensor {0}")]
    ChecksumMismatch(String),
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("missing metadata key {0}")]
    MissingMeta(String),
    #[error("invalid utf-8 in header")]
    BadUtf8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// In-memory checkpoint: ordered tensors plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

fn payload_checksum(data: &[f32]) -> u64 {
    let mut hasher = Sha256::new();
    for v in data {
        hasher.update(v.to_le_bytes());
    }
    let d = hasher.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl Checkpoint {
    /// Snapshot of every parameter a model exposes (visit order).
    pub fn from_model<T: Scalar>(kind: &str, model: &dyn ParamVisit<T>) -> Self {
        let mut ckpt = Checkpoint::default();
        ckpt.meta.insert("kind".into(), kind.into());
        model.visit(&mut |name, tensor| {
            ckpt.tensors.push(TensorEntry {
                name: name.to_string(),
                shape: tensor.shape().to_vec(),
                data: tensor.iter().map(|v| v.as_f32()).collect(),
            });
        });
        ckpt
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_array<T: Scalar>(&self, name: &str) -> Result<ArrayD<T>, CheckpointError> {
        let entry = self
            .tensor(name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        Ok(ArrayD::from_shape_vec(
            IxDyn(&entry.shape),
            entry.data.iter().map(|&v| T::of_f32(v)).collect(),
        )
        .expect("stored shape is consistent"))
    }

    /// Writes every visited parameter of `model` from the checkpoint.
    pub fn restore<T: Scalar>(
        &self,
        model: &mut dyn ParamVisit<T>,
    ) -> Result<(), CheckpointError> {
        let mut missing: Option<CheckpointError> = None;
        model.visit_mut(&mut |name, tensor| {
            if missing.is_some() {
                return;
            }
            match self.tensor(name) {
                None => missing = Some(CheckpointError::MissingTensor(name.to_string())),
                Some(entry) => {
                    if entry.shape != tensor.shape() {
                        missing = Some(CheckpointError::ShapeMismatch {
                            name: name.to_string(),
                            expected: tensor.shape().to_vec(),
                            found: entry.shape.clone(),
                        });
                    } else {
                        for (dst, &src) in tensor.iter_mut().zip(entry.data.iter()) {
                            *dst = T::of_f32(src);
                        }
                    }
                }
            }
        });
        match missing {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Deterministic identity of the checkpoint contents (names,
    /// shapes, payloads, and metadata).
    pub fn content_hash(&self) -> u64 {
        let mut hasher = Sha256::new();
        for (k, v) in &self.meta {
            hasher.update(k.as_bytes());
            hasher.update([0]);
            hasher.update(v.as_bytes());
            hasher.update([0]);
        }
        for t in &self.tensors {
            hasher.update(t.name.as_bytes());
            hasher.update([0]);
            for &d in &t.shape {
                hasher.update((d as u32).to_le_bytes());
            }
            for v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        let d = hasher.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            out.extend_from_slice(&(k.len() as u16).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&payload_checksum(&t.data).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        struct R<'a> {
            b: &'a [u8],
            at: usize,
        }
        impl<'a> R<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
                if self.at + n > self.b.len() {
                    return Err(CheckpointError::Truncated);
                }
                let s = &self.b[self.at..self.at + n];
                self.at += n;
                Ok(s)
            }
            fn u8(&mut self) -> Result<u8, CheckpointError> {
                Ok(self.take(1)?[0])
            }
            fn u16(&mut self) -> Result<u16, CheckpointError> {
                Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
            }
            fn u32(&mut self) -> Result<u32, CheckpointError> {
                Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
            }
            fn u64(&mut self) -> Result<u64, CheckpointError> {
                Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
            }
            fn string(&mut self, n: usize) -> Result<String, CheckpointError> {
                String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::BadUtf8)
            }
        }
        let mut r = R { b: bytes, at: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut ckpt = Checkpoint::default();
        let n_meta = r.u32()? as usize;
        for _ in 0..n_meta {
            let klen = r.u16()? as usize;
            let k = r.string(klen)?;
            let vlen = r.u32()? as usize;
            let v = r.string(vlen)?;
            ckpt.meta.insert(k, v);
        }
        let n_tensors = r.u32()? as usize;
        for _ in 0..n_tensors {
            let nlen = r.u16()? as usize;
            let name = r.string(nlen)?;
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let count: usize = shape.iter().product();
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(f32::from_le_bytes(r.take(4)?.try_into().unwrap()));
            }
            let stored = r.u64()?;
            if stored != payload_checksum(&data) {
                return Err(CheckpointError::ChecksumMismatch(name));
            }
            ckpt.tensors.push(TensorEntry { name, shape, data });
        }
        Ok(ckpt)
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
}
