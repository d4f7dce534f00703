use std::io::{Read, Write};

use super::{read_all, Cursor};
use crate::error::{Error, Result};
use crate::types::VoxelGrid;

pub const VOX_MAGIC: &[u8; 4] = b"VOX1";
pub const VOX_HEADER_LEN: usize = 4 + 3 * 4;

/// Writes `grid` as VOX1 (bin-major, then row-major, f32 little-endian).
pub fn write_voxel(grid: &VoxelGrid, mut w: impl Write) -> Result<u64> {
    let (b, h, wd) = grid.shape();
    let mut buf = Vec::with_capacity(VOX_HEADER_LEN + grid.data().len() * 4);
    buf.extend_from_slice(VOX_MAGIC);
    for dim in [b, h, wd] {
        let dim = u32::try_from(dim).map_err(|_| Error::Shape(format!("dimension {dim} exceeds u32")))?;
        buf.extend_from_slice(&dim.to_le_bytes());
    }
    for v in grid.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(buf.len() as u64)
}

pub fn read_voxel(r: impl Read) -> Result<VoxelGrid> {
    read_voxel_bytes(&read_all(r)?)
}

pub fn read_voxel_bytes(bytes: &[u8]) -> Result<VoxelGrid> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4).map_err(|_| Error::BadMagic { expected: "VOX1", found: bytes.to_vec() })?;
    if magic != VOX_MAGIC {
        return Err(Error::BadMagic { expected: "VOX1", found: magic.to_vec() });
    }
    let b = cur.u32()? as usize;
    let h = cur.u32()? as usize;
    let w = cur.u32()? as usize;
    let n = (b as u128) * (h as u128) * (w as u128);
    if n * 4 != cur.remaining() as u128 {
        return Err(Error::format(
            "VOX1",
            format!("shape {b}x{h}x{w} needs {} data bytes, found {}", n * 4, cur.remaining()),
        ));
    }
    let mut data = Vec::with_capacity(n as usize);
    for _ in 0..n {
        data.push(cur.f32()?);
    }
    VoxelGrid::new(b, h, w, data)
}
