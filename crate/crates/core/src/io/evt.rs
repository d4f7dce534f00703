use std::io::{Read, Write};

use super::{read_all, Cursor};
use crate::error::{Error, Result};
use crate::types::{Event, EventStream, Polarity};

pub const EVT_MAGIC: &[u8; 4] = b"EVT1";
/// magic + width + height + t_start + t_end + count
pub const EVT_HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8 + 8;
/// t (u64) + x (u16) + y (u16) + p (i8), packed
pub const EVT_RECORD_LEN: usize = 8 + 2 + 2 + 1;

/// Writes `stream` as EVT1 and returns the number of bytes emitted.
pub fn write_events(stream: &EventStream, mut w: impl Write) -> Result<u64> {
    let mut buf = Vec::with_capacity(EVT_HEADER_LEN + stream.len() * EVT_RECORD_LEN);
    buf.extend_from_slice(EVT_MAGIC);
    buf.extend_from_slice(&stream.width().to_le_bytes());
    buf.extend_from_slice(&stream.height().to_le_bytes());
    buf.extend_from_slice(&stream.t_start().to_le_bytes());
    buf.extend_from_slice(&stream.t_end().to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.as_i8() as u8);
    }
    w.write_all(&buf)?;
    Ok(buf.len() as u64)
}

pub fn read_events(r: impl Read) -> Result<EventStream> {
    read_events_bytes(&read_all(r)?)
}

/// Parses EVT1 bytes. Stored order must already be canonical; out-of-order
/// records are rejected rather than repaired.
pub fn read_events_bytes(bytes: &[u8]) -> Result<EventStream> {
    let mut cur = Cursor::new(bytes);
    let magic = cur.take(4).map_err(|_| Error::BadMagic { expected: "EVT1", found: bytes.to_vec() })?;
    if magic != EVT_MAGIC {
        return Err(Error::BadMagic { expected: "EVT1", found: magic.to_vec() });
    }
    let width = cur.u32()?;
    let height = cur.u32()?;
    let t_start = cur.u64()?;
    let t_end = cur.u64()?;
    let count = cur.u64()?;

    let needed = (count as u128) * EVT_RECORD_LEN as u128;
    if needed > cur.remaining() as u128 {
        // report the offset of the first incomplete record
        let whole = cur.remaining() / EVT_RECORD_LEN;
        return Err(Error::Truncated { offset: (cur.position() + whole * EVT_RECORD_LEN) as u64 });
    }
    if needed < cur.remaining() as u128 {
        return Err(Error::format(
            "EVT1",
            format!("{} trailing bytes after {count} records", cur.remaining() as u128 - needed),
        ));
    }
    let mut events = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let t = cur.u64()?;
        let x = cur.u16()?;
        let y = cur.u16()?;
        let p = Polarity::try_from(cur.i8()?)?;
        events.push(Event::new(t, x, y, p));
    }
    EventStream::new(width, height, t_start, t_end, events)
}
