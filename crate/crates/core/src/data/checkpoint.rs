//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "DFORGECK"
//! version  u32      1
//! count    u32      number of entries
//! entry*   name_len u32, name (UTF-8), ndim u32, dims u64 * ndim,
//!          payload f64 * prod(dims)
//! ```
//!
//! Trailing bytes after the last entry are an error.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DFORGECK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ordered named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, t) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("entry {name}: shape overflows")))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| {
                Error::Checkpoint(format!("entry {name}: payload too large"))
            })?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            entries.push((name, Tensor::new(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after last entry",
                bytes.len() - r.pos
            )));
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_checkpoint_roundtrips() {
        let c = Checkpoint::default();
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), 16);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let c = Checkpoint::new(vec![("w".into(), Tensor::full(&[2, 3], 1.5))]);
        let good = c.to_bytes();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(Error::Checkpoint(m)) if m.contains("magic")));

        let mut bad_version = good.clone();
        bad_version[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad_version), Err(Error::Checkpoint(m)) if m.contains("version")));

        assert!(matches!(Checkpoint::from_bytes(&good[..good.len() - 3]), Err(Error::Checkpoint(m)) if m.contains("truncated")));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(Checkpoint::from_bytes(&trailing).is_err());
    }
}
