//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "EVCKPT\0\0"
//! version    u32
//! manifest   u64 length + UTF-8 JSON
//! count      u32 number of parameters
//! per parameter:
//!   name     u32 length + UTF-8 bytes
//!   rank     u32, then rank × u64 dimensions
//!   values   product(dims) × f64 (IEEE-754, little-endian)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EVCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    /// Which model the parameters belong to (`causal`, `predictor`).
    pub kind: String,
    pub config_hash: String,
    pub model_config: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let manifest = serde_json::to_vec(&self.manifest)?;
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8, "header")?;
        if magic != MAGIC {
            return Err(Error::checkpoint("header", "bad magic bytes"));
        }
        let version = r.u32("header")?;
        if version != FORMAT_VERSION {
            return Err(Error::checkpoint(
                "header",
                format!("format version {version}, expected {FORMAT_VERSION}"),
            ));
        }
        let len = r.u64("manifest")? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(len, "manifest")?)
            .map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
        if manifest.format_version != version {
            return Err(Error::checkpoint("manifest", "version disagrees with header"));
        }
        let count = r.u32("parameter table")?;
        let mut params = ParamStore::new();
        for i in 0..count {
            let section = format!("parameter #{i}");
            let name_len = r.u32(&section)? as usize;
            let name = std::str::from_utf8(r.take(name_len, &section)?)
                .map_err(|_| Error::checkpoint(&section, "name is not UTF-8"))?
                .to_string();
            let section = format!("parameter `{name}`");
            let rank = r.u32(&section)? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::checkpoint(&section, format!("invalid rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64(&section)? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0 && n <= bytes.len())
                .ok_or_else(|| Error::checkpoint(&section, format!("invalid shape {shape:?}")))?;
            let raw = r.take(n * 8, &section)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::checkpoint("trailer", "unexpected trailing bytes"));
        }
        Ok(Self { manifest, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Checks that the stored parameters match `expected` by name and shape.
    pub fn validate_against(&self, expected: &ParamStore) -> Result<()> {
        for (name, t) in expected.iter() {
            let found = self
                .params
                .get(name)
                .ok_or_else(|| Error::checkpoint(format!("parameter `{name}`"), "missing"))?;
            if found.shape() != t.shape() {
                return Err(Error::ParamShape {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    found: found.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.params.names().find(|n| expected.get(n).is_none()) {
            return Err(Error::checkpoint(
                format!("parameter `{extra}`"),
                "not part of this model",
            ));
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::checkpoint(section, "truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }
}
