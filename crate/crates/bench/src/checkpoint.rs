//! Binary checkpoint container.
//!
//! ```text
//! magic        10 bytes  "SPLUSCKPT\0"
//! version      u32 LE    1
//! count        u32 LE    number of tensors
//! per tensor:
//!   name_len   u16 LE
//!   name       UTF-8
//!   rank       u8
//!   dims       rank x u64 LE
//!   dtype      u8        0 = f64, 1 = f32
//!   payload    row-major little-endian values
//! step         u64 LE
//! rng_position u64 LE
//! ```
//!
//! Tensors are written in name order. Loading is all-or-nothing; every
//! error names the byte offset where reading stopped.

use std::path::Path;

use splus_core::{Error, ParamMap, Result, Scalar, Tensor};

pub const MAGIC: &[u8; 10] = b"SPLUSCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub tensors: ParamMap<T>,
    pub step: u64,
    pub rng_position: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.tensors.len()).map_err(|_| Error::contract("too many tensors"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, t) in &self.tensors {
            let len =
                u16::try_from(name.len()).map_err(|_| Error::contract(format!("tensor name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| Error::contract(format!("rank too large: {name}")))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.push(T::DTYPE_TAG);
            for &v in t.as_slice() {
                v.write_le(&mut out);
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng_position.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::input("checkpoint: bad magic at byte offset 0"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::input(format!(
                "checkpoint: unsupported version {version} at byte offset {}",
                MAGIC.len()
            )));
        }
        let count = r.u32("tensor count")?;
        let mut tensors = ParamMap::new();
        for _ in 0..count {
            let start = r.pos;
            let len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::input(format!("checkpoint: tensor name is not UTF-8 at byte offset {start}")))?
                .to_string();
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = r.u64("dimension")?;
                shape.push(usize::try_from(d).map_err(|_| r.error("dimension does not fit in memory"))?);
            }
            let tag_pos = r.pos;
            let tag = r.u8("dtype")?;
            if tag != T::DTYPE_TAG {
                return Err(Error::input(format!(
                    "checkpoint: tensor `{name}` has dtype tag {tag}, expected {} at byte offset {tag_pos}",
                    T::DTYPE_TAG
                )));
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| r.error("tensor size overflows"))?;
            let nbytes = numel.checked_mul(T::BYTES).ok_or_else(|| r.error("tensor size overflows"))?;
            let payload = r.take(nbytes, "payload")?;
            let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(Error::input(format!("checkpoint: duplicate tensor `{name}` at byte offset {start}")));
            }
        }
        let step = r.u64("step")?;
        let rng_position = r.u64("rng position")?;
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after checkpoint"));
        }
        Ok(Self { tensors, step, rng_position })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::input(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::input(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Input(msg) => Error::input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error(&self, what: &str) -> Error {
        Error::input(format!("checkpoint: {what} at byte offset {}", self.pos))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::input(format!(
                "checkpoint: truncated while reading {what} at byte offset {} (need {n} bytes, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}
