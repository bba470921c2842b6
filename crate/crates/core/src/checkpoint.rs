//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic    4 bytes  "KMCK"
//! version  u32      1
//! digest   32 bytes SHA-256 of the model configuration
//! count    u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8), rank u32, extents u32 x rank, values f32 x product(extents)
//! ```

use std::fs;
use std::path::Path;

use kronmark_tensor::Tensor;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"KMCK";
pub const VERSION: u32 = 1;

pub type ConfigDigest = [u8; 32];

pub fn sha256(bytes: &[u8]) -> ConfigDigest {
    Sha256::digest(bytes).into()
}

pub fn encode(digest: &ConfigDigest, tensors: &[(String, Tensor<f32>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(digest);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ConfigDigest, Vec<(String, Tensor<f32>)>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let digest: ConfigDigest = r.take(32)?.try_into().unwrap();
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        tensors.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((digest, tensors))
}

pub fn write(path: &Path, digest: &ConfigDigest, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    fs::write(path, encode(digest, tensors)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(ConfigDigest, Vec<(String, Tensor<f32>)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a checkpoint and checks it against the expected configuration.
pub fn read_matching(path: &Path, expected: &ConfigDigest) -> Result<Vec<(String, Tensor<f32>)>> {
    let (digest, tensors) = read(path)?;
    if &digest != expected {
        return Err(Error::DigestMismatch { expected: hex::encode(expected), found: hex::encode(digest) });
    }
    Ok(tensors)
}
