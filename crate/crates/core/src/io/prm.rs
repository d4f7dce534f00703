use std::io::{Read, Write};

use super::{read_all, Cursor};
use crate::error::{Error, Result};

pub const PRM_MAGIC: &[u8; 4] = b"PRM1";

/// One tagged tensor inside a PRM1 container.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Layout: magic, u32 count, then per tensor u32 name length, UTF-8 name,
/// u32 rank, rank × u32 dims, product(dims) × f32. All little-endian.
pub fn write_params(tensors: &[NamedTensor], mut w: impl Write) -> Result<u64> {
    let mut buf = Vec::new();
    buf.extend_from_slice(PRM_MAGIC);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {} shape {:?} does not match {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        buf.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(buf.len() as u64)
}

pub fn read_params(r: impl Read) -> Result<Vec<NamedTensor>> {
    let bytes = read_all(r)?;
    let mut cur = Cursor::new(&bytes);
    let magic = cur.take(4)?;
    if magic != PRM_MAGIC {
        return Err(Error::BadMagic { expected: "PRM1", found: magic.to_vec() });
    }
    let count = cur.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(len)?.to_vec()).map_err(|e| Error::format("PRM1", e.to_string()))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n.min(cur.remaining() / 4));
        for _ in 0..n {
            data.push(cur.f32()?);
        }
        out.push(NamedTensor { name, shape, data });
    }
    if cur.remaining() != 0 {
        return Err(Error::format("PRM1", "trailing bytes"));
    }
    Ok(out)
}
