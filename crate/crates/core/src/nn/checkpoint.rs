//! Binary checkpoint encoding.
//!
//! Layout (all integers little-endian `u32`, values little-endian `f32`):
//! the magic `DSU1`, the entry count, then per entry the name length, the
//! UTF-8 name, the dimension count, the dimensions and the raw values.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::net::{Module, Slot};
use super::tensor::Tensor4;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DSU1";

pub fn encode(entries: &[(String, Tensor4)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor4)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
        let ndims = r.u32()? as usize;
        if ndims > 4 {
            return Err(Error::Checkpoint(format!("{name}: {ndims} dimensions")));
        }
        let mut shape = [1usize; 4];
        for d in shape.iter_mut().skip(4 - ndims) {
            *d = r.u32()? as usize;
        }
        let n: usize = shape.iter().product();
        let raw = r.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("overflow".into()))?,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor4::from_vec(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

/// Copies every tensor of `module` from `entries` by name. Missing names or
/// shape mismatches are errors; extra entries are ignored.
pub fn load_into(
    module: &mut dyn Module,
    prefix: &str,
    entries: &[(String, Tensor4)],
) -> Result<()> {
    let map: BTreeMap<&str, &Tensor4> = entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    let mut err = None;
    module.visit(prefix, &mut |name, slot| {
        if err.is_some() {
            return;
        }
        let dst = match slot {
            Slot::Param(p) => &mut p.value,
            Slot::Buffer(b) => b,
        };
        match map.get(name) {
            None => err = Some(Error::Checkpoint(format!("missing tensor {name}"))),
            Some(src) if src.shape() != dst.shape() => {
                err = Some(Error::Shape {
                    op: "checkpoint load",
                    left: dst.shape(),
                    right: src.shape(),
                })
            }
            Some(src) => dst.data_mut().copy_from_slice(src.data()),
        }
    });
    err.map_or(Ok(()), Err)
}
