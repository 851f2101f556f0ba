//! Versioned binary container used for every persisted artifact.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes    e.g. b"ACNN"
//! version    u32
//! meta_len   u64        byte length of the UTF-8 JSON metadata
//! meta       meta_len bytes
//! count      u64        number of f64 values in the payload
//! payload    count * 8 bytes, IEEE-754 f64 little-endian
//! ```
//!
//! Containers are self-delimiting, so composite artifacts are plain
//! concatenations.

use std::path::Path;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub const MAGIC_NETWORK: [u8; 4] = *b"ACNN";
pub const MAGIC_FEATURES: [u8; 4] = *b"AFTB";
pub const MAGIC_HEAD: [u8; 4] = *b"AHED";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 4],
    pub version: u32,
    pub meta: String,
    pub payload: Vec<f64>,
}

impl Container {
    pub fn new(magic: [u8; 4], meta: String, payload: Vec<f64>) -> Self {
        Self {
            magic,
            version: FORMAT_VERSION,
            meta,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.meta.len() + 8 * self.payload.len());
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses one container from the front of `bytes`; returns it together
    /// with the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8], expected: [u8; 4]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
        if magic != expected {
            return Err(Error::Format(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(&expected),
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "version mismatch: file has {version}, reader supports {FORMAT_VERSION}"
            )));
        }
        let meta_len = cur.u64()? as usize;
        let meta = std::str::from_utf8(cur.take(meta_len)?)
            .map_err(|e| Error::Format(format!("metadata is not UTF-8: {e}")))?
            .to_owned();
        let count = cur.u64()? as usize;
        let raw = cur.take(count.checked_mul(8).ok_or_else(|| Error::Format("payload too large".into()))?)?;
        let payload = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok((
            Self {
                magic,
                version,
                meta,
                payload,
            },
            cur.pos,
        ))
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path, expected: [u8; 4]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (c, used) = Self::from_bytes(&bytes, expected)?;
        if used != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after container in {}",
                bytes.len() - used,
                path.display()
            )));
        }
        Ok(c)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated container".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Sequential writer for numeric payloads.
#[derive(Debug, Default)]
pub struct PayloadWriter {
    values: Vec<f64>,
}

impl PayloadWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    /// Integers are stored as exact f64 values (fine below 2^53).
    pub fn push_usize(&mut self, v: usize) {
        debug_assert!(v < (1usize << 53));
        self.values.push(v as f64);
    }

    pub fn push_slice(&mut self, vs: &[f64]) {
        self.push_usize(vs.len());
        self.values.extend_from_slice(vs);
    }

    pub fn finish(self) -> Vec<f64> {
        self.values
    }
}

#[derive(Debug)]
pub struct PayloadReader<'a> {
    values: &'a [f64],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(values: &'a [f64]) -> Self {
        Self { values, pos: 0 }
    }

    pub fn next(&mut self) -> Result<f64> {
        let v = *self
            .values
            .get(self.pos)
            .ok_or_else(|| Error::Format("payload ended early".into()))?;
        self.pos += 1;
        Ok(v)
    }

    pub fn next_usize(&mut self) -> Result<usize> {
        let v = self.next()?;
        if v < 0.0 || v.fract() != 0.0 || v >= (1u64 << 53) as f64 {
            return Err(Error::Format(format!("expected an integer in payload, found {v}")));
        }
        Ok(v as usize)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        let end = self.pos + n;
        if end > self.values.len() {
            return Err(Error::Format("payload ended early".into()));
        }
        let s = &self.values[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn next_slice(&mut self) -> Result<Vec<f64>> {
        let n = self.next_usize()?;
        Ok(self.take(n)?.to_vec())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.values.len() {
            return Err(Error::Format(format!(
                "{} unread payload values",
                self.values.len() - self.pos
            )));
        }
        Ok(())
    }
}
