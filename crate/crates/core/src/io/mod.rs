//! File formats: EVT1 event streams, VOX1 voxel grids, PRM1 parameter
//! containers, PGM frames and CSV event interchange.

mod csv_events;
mod evt;
mod pgm;
mod prm;
mod vox;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub use csv_events::{read_events_csv, write_events_csv};
pub use evt::{read_events, read_events_bytes, write_events, EVT_HEADER_LEN, EVT_MAGIC, EVT_RECORD_LEN};
pub use pgm::{read_pgm, write_pgm, BitDepth};
pub use prm::{read_params, write_params, NamedTensor, PRM_MAGIC};
pub use vox::{read_voxel, read_voxel_bytes, write_voxel, VOX_HEADER_LEN, VOX_MAGIC};

use crate::error::Result;
use crate::types::{EventStream, Frame, VoxelGrid};

/// Little-endian cursor over an in-memory buffer that reports the byte offset
/// where data ran out.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(crate::Error::Truncated { offset: self.buf.len() as u64 });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub(crate) fn i8(&mut self) -> Result<i8> {
        Ok(self.take(1)?[0] as i8)
    }
    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn read_all(mut r: impl Read) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn write_events_file(stream: &EventStream, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_events(stream, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_events_file(path: impl AsRef<Path>) -> Result<EventStream> {
    read_events(BufReader::new(File::open(path)?))
}

pub fn write_voxel_file(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_voxel(grid, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_voxel_file(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    read_voxel(BufReader::new(File::open(path)?))
}

pub fn write_pgm_file(frame: &Frame, depth: BitDepth, path: impl AsRef<Path>) -> Result<u64> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = write_pgm(frame, depth, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn read_pgm_file(path: impl AsRef<Path>) -> Result<Frame> {
    read_pgm(BufReader::new(File::open(path)?))
}
