//! Binary parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"CWPT1" | u32 count | count × { u32 name_len | name | u8 kind | u32 ndim | ndim × u64 dim | f32 data } | u32 crc32
//! ```
//!
//! The CRC covers every byte before it. Values are stored as `f32`, so a loaded store
//! holds the `f32`-rounded parameters; saving it again reproduces the file byte for byte.

use std::fs;
use std::path::Path;

use super::{ParamKind, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"CWPT1";

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(match p.kind {
            ParamKind::Weight => 0,
            ParamKind::Buffer => 1,
        });
        out.extend_from_slice(&(p.value.ndim() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(format!("byte {}", self.pos), "unexpected end of checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ParamStore> {
    if buf.len() < MAGIC.len() + 8 || &buf[..MAGIC.len()] != MAGIC {
        return Err(Error::format("byte 0", "not a parameter checkpoint"));
    }
    let body = &buf[..buf.len() - 4];
    let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::Checksum("parameter checkpoint".into()));
    }
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(format!("byte {at}"), "parameter name is not UTF-8"))?
            .to_string();
        let kind = match r.take(1)?[0] {
            0 => ParamKind::Weight,
            1 => ParamKind::Buffer,
            k => return Err(Error::format(format!("byte {}", r.pos - 1), format!("unknown parameter kind {k}"))),
        };
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if store.id(&name).is_some() {
            return Err(Error::format(format!("byte {at}"), format!("duplicate parameter `{name}`")));
        }
        store.insert(&name, Tensor::new(&shape, data)?, kind);
    }
    if r.pos != body.len() {
        return Err(Error::format(format!("byte {}", r.pos), "trailing bytes after last parameter"));
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Copies values from `src` into same-named, same-shaped entries of `dst`.
pub fn restore_into(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::Validation(format!(
            "checkpoint has {} parameters, model expects {}",
            src.len(),
            dst.len()
        )));
    }
    for p in src.iter() {
        let id = dst
            .id(&p.name)
            .ok_or_else(|| Error::Validation(format!("unexpected parameter `{}` in checkpoint", p.name)))?;
        let q = dst.get_mut(id);
        if q.value.shape() != p.value.shape() {
            return Err(Error::Validation(format!(
                "parameter `{}` has shape {:?}, model expects {:?}",
                p.name,
                p.value.shape(),
                q.value.shape()
            )));
        }
        q.value = p.value.clone();
    }
    Ok(())
}
