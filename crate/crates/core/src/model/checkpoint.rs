//! Binary checkpoint container.
//!
//! A checkpoint holds any number of named entries, each a full
//! [`DetectorConfig`] plus every parameter tensor. All integers and floats
//! are little-endian.
//!
//! ```text
//! magic  b"CSPKCKPT"          8 bytes
//! version u32                 currently 1
//! entries u32
//! entry:
//!   key_len u16, key (UTF-8)
//!   config  9 × u32           k, C, H, S, L, F, T, P, M
//!   tensors u32
//!   tensor:
//!     name_len u16, name (UTF-8)
//!     rank u8, dims rank × u32
//!     payload  product(dims) × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{DetectorConfig, DetectorParams, ModelError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CSPKCKPT";
pub const VERSION: u32 = 1;

/// Conventional key for a fold's parameters after a given epoch.
pub fn fold_key(fold: usize, epoch: usize) -> String {
    format!("fold{fold}_epoch{epoch}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub key: String,
    pub config: DetectorConfig,
    pub params: DetectorParams,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `key`. Insertion order is preserved.
    pub fn insert(&mut self, key: impl Into<String>, config: DetectorConfig, params: DetectorParams) {
        let key = key.into();
        let entry = CheckpointEntry { key, config, params };
        match self.entries.iter_mut().find(|e| e.key == entry.key) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn get(&self, key: &str) -> Option<&CheckpointEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn entries(&self) -> &[CheckpointEntry] {
        &self.entries
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.key.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for entry in &self.entries {
            put_str(&mut out, &entry.key);
            let c = &entry.config;
            for v in [
                c.kernel_size,
                c.channels,
                c.hidden,
                c.side,
                c.layers,
                c.stacks,
                c.seg_len,
                c.pad,
                c.classes,
            ] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            let named = entry.params.named();
            out.extend_from_slice(&(named.len() as u32).to_le_bytes());
            for (name, t) in named {
                put_str(&mut out, &name);
                out.push(t.rank() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for &v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let key = r.string()?;
            let mut f = [0usize; 9];
            for v in &mut f {
                *v = r.u32()? as usize;
            }
            let config = DetectorConfig {
                kernel_size: f[0],
                channels: f[1],
                hidden: f[2],
                side: f[3],
                layers: f[4],
                stacks: f[5],
                seg_len: f[6],
                pad: f[7],
                classes: f[8],
            };
            config.validate()?;
            let expected = config.param_shapes();
            let n = r.u32()? as usize;
            if n != expected.len() {
                return Err(ModelError::Checkpoint(format!(
                    "entry {key}: {n} tensors, config implies {}",
                    expected.len()
                )));
            }
            let mut tensors = Vec::with_capacity(n);
            for (want_name, _) in &expected {
                let name = r.string()?;
                if &name != want_name {
                    return Err(ModelError::Checkpoint(format!(
                        "entry {key}: expected tensor {want_name}, found {name}"
                    )));
                }
                let rank = r.take(1)?[0] as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(r.u32()? as usize);
                }
                let len: usize = shape.iter().product();
                let raw = r.take(len * 8)?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                tensors.push(Tensor::new(shape, data)?);
            }
            let params = DetectorParams::from_tensors(&config, tensors)?;
            entries.push(CheckpointEntry { key, config, params });
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes after last entry".into()));
        }
        Ok(Self { entries })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| ModelError::Checkpoint("unexpected end of checkpoint".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| ModelError::Checkpoint("invalid UTF-8 name".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DetectorConfig {
        DetectorConfig {
            kernel_size: 3,
            channels: 3,
            hidden: 5,
            side: 4,
            layers: 2,
            stacks: 1,
            seg_len: 10,
            pad: 2,
            classes: 1,
        }
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let mut ck = Checkpoint::new();
        let cfg = small();
        ck.insert(fold_key(0, 3), cfg, DetectorParams::init(&cfg, 1).unwrap());
        ck.insert("final", cfg, DetectorParams::init(&cfg, 2).unwrap());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.keys().collect::<Vec<_>>(), ["fold0_epoch3", "final"]);
    }

    #[test]
    fn insert_replaces_existing_key() {
        let cfg = small();
        let mut ck = Checkpoint::new();
        ck.insert("a", cfg, DetectorParams::init(&cfg, 1).unwrap());
        ck.insert("a", cfg, DetectorParams::init(&cfg, 2).unwrap());
        assert_eq!(ck.entries().len(), 1);
        assert_eq!(ck.get("a").unwrap().params, DetectorParams::init(&cfg, 2).unwrap());
    }

    #[test]
    fn truncated_and_foreign_input_rejected() {
        let cfg = small();
        let mut ck = Checkpoint::new();
        ck.insert("final", cfg, DetectorParams::init(&cfg, 1).unwrap());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"hello world, not a model").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
