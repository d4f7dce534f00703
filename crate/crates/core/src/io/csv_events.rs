use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::types::{Event, EventStream, Polarity};

/// Writes `t,x,y,p` rows under a header line.
pub fn write_events_csv(stream: &EventStream, w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["t", "x", "y", "p"]).map_err(|e| Error::format("CSV", e.to_string()))?;
    for e in stream.events() {
        wr.write_record([e.t.to_string(), e.x.to_string(), e.y.to_string(), e.p.as_i8().to_string()])
            .map_err(|e| Error::format("CSV", e.to_string()))?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `t,x,y,p` rows (header required). CSV carries no geometry, so the
/// sensor size is supplied; the time window defaults to the span of the events.
/// Rows may be in any order and are sorted canonically.
pub fn read_events_csv(r: impl Read, width: u32, height: u32, window: Option<(u64, u64)>) -> Result<EventStream> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut events = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::format("CSV", e.to_string()))?;
        if rec.len() != 4 {
            return Err(Error::format("CSV", format!("row {} has {} fields, expected 4", line + 1, rec.len())));
        }
        let field = |i: usize| -> Result<i64> {
            rec[i].parse::<i64>().map_err(|e| Error::format("CSV", format!("row {}: {e}", line + 1)))
        };
        let (t, x, y, p) = (field(0)?, field(1)?, field(2)?, field(3)?);
        if t < 0 || !(0..=u16::MAX as i64).contains(&x) || !(0..=u16::MAX as i64).contains(&y) {
            return Err(Error::format("CSV", format!("row {} out of range", line + 1)));
        }
        let p = Polarity::try_from(i8::try_from(p).unwrap_or(0))?;
        events.push(Event::new(t as u64, x as u16, y as u16, p));
    }
    let (t_start, t_end) = window.unwrap_or_else(|| {
        let lo = events.iter().map(|e| e.t).min().unwrap_or(0);
        let hi = events.iter().map(|e| e.t).max().unwrap_or(0);
        (lo, hi)
    });
    EventStream::from_unsorted(width, height, t_start, t_end, events)
}
