//! Parameter-store files: magic `AFFP`, `u32` version, `u32` tensor count,
//! then per tensor a `u32` name length, the UTF-8 name, `u32` rank (always
//! 2), two `u64` dims, a `u8` dtype (0 = f32, 1 = f64) and the row-major
//! payload. All integers and floats are little-endian.

use std::collections::HashSet;
use std::path::Path;

use aff_core::autodiff::{DType, ParamStore, Real, Tensor};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AFFP";
pub const VERSION: u32 = 1;

pub fn encode<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.numel() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.value(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(t.rows as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols as u64).to_le_bytes());
        match T::DTYPE {
            DType::F32 => {
                out.push(0);
                for v in &t.data {
                    out.extend_from_slice(&(Real::to_f64(*v) as f32).to_le_bytes());
                }
            }
            DType::F64 => {
                out.push(1);
                for v in &t.data {
                    out.extend_from_slice(&Real::to_f64(*v).to_le_bytes());
                }
            }
        }
    }
    out
}

/// A stored tensor, widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub value: Tensor<f64>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(self.pos, format!("truncated {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "not a parameter file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at + 4, "name is not UTF-8"))?
            .to_string();
        let rank_at = r.pos;
        let rank = r.u32("rank")?;
        if rank != 2 {
            return Err(Error::format(rank_at, format!("rank {rank}; only 2 is supported")));
        }
        let rows = r.u64("dims")? as usize;
        let cols = r.u64("dims")? as usize;
        let dtype_at = r.pos;
        let (dtype, width) = match r.take(1, "dtype")?[0] {
            0 => (DType::F32, 4),
            1 => (DType::F64, 8),
            d => return Err(Error::format(dtype_at, format!("unknown dtype {d}"))),
        };
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::format(dtype_at, "tensor too large"))?;
        let payload = r.take(n, "payload")?;
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        };
        out.push(Entry {
            name,
            dtype,
            value: Tensor::from_vec(rows, cols, data),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after last tensor"));
    }
    Ok(out)
}

/// Overwrites every parameter of `store` from `entries`. Missing, unknown or
/// misshapen tensors are errors.
pub fn apply<T: Real>(store: &mut ParamStore<T>, entries: &[Entry]) -> Result<()> {
    let mut seen = HashSet::new();
    for e in entries {
        store.load(&e.name, e.value.cast())?;
        seen.insert(e.name.as_str());
    }
    if let Some(id) = store.ids().find(|&id| !seen.contains(store.name(id))) {
        return Err(Error::Invalid(format!("checkpoint lacks parameter {}", store.name(id))));
    }
    Ok(())
}

pub fn save<T: Real>(path: impl AsRef<Path>, store: &ParamStore<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load_into<T: Real>(path: impl AsRef<Path>, store: &mut ParamStore<T>) -> Result<()> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    apply(store, &decode(&bytes)?)
}
