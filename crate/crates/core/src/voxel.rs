//! Event stream → temporal voxel grid.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{EventStream, VoxelGrid};

/// Default temporal bin count.
pub const DEFAULT_BINS: usize = 13;

/// Splits an event time into `(bin, frac)` with
/// `τ = (t − t_start)·(B−1)/(t_end − t_start) = bin + frac`.
/// The bin index is computed with exact integer arithmetic.
pub fn temporal_position(t: u64, t_start: u64, t_end: u64, bins: usize) -> (usize, f64) {
    let dur = (t_end - t_start) as u128;
    if bins == 1 || dur == 0 {
        return (0, 0.0);
    }
    let num = (t - t_start) as u128 * (bins as u128 - 1);
    let k = (num / dur) as usize;
    if k >= bins - 1 {
        return (bins - 1, 0.0);
    }
    (k, (num % dur) as f64 / dur as f64)
}

/// Deposits each event's polarity into bins `⌊τ⌋` and `⌊τ⌋+1` with weights
/// `(1 − frac, frac)`. Events at `τ = B−1` land fully in the last bin.
/// Accumulation is 64-bit; rows are processed in parallel, each in stream
/// order, so the result is identical to a sequential pass.
pub fn voxelize(stream: &EventStream, bins: usize) -> Result<VoxelGrid> {
    if bins == 0 {
        return Err(Error::invalid("bins", "must be at least 1"));
    }
    if bins > 1 && stream.duration() == 0 {
        return Err(Error::invalid("event stream", format!("zero-duration window cannot be split into {bins} bins")));
    }
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); h];
    for (i, e) in stream.events().iter().enumerate() {
        by_row[e.y as usize].push(i);
    }
    let events = stream.events();
    let (t0, t1) = (stream.t_start(), stream.t_end());
    // per row: bins × width accumulators
    let rows: Vec<Vec<f64>> = by_row
        .par_iter()
        .map(|idx| {
            let mut acc = vec![0.0f64; bins * w];
            for &i in idx {
                let e = &events[i];
                let p = e.p.as_f64();
                let x = e.x as usize;
                let (k, frac) = temporal_position(e.t, t0, t1, bins);
                acc[k * w + x] += p * (1.0 - frac);
                if frac > 0.0 {
                    acc[(k + 1) * w + x] += p * frac;
                }
            }
            acc
        })
        .collect();
    let mut data = vec![0.0f32; bins * h * w];
    for (y, acc) in rows.iter().enumerate() {
        for b in 0..bins {
            let dst = &mut data[(b * h + y) * w..(b * h + y + 1) * w];
            for (d, &v) in dst.iter_mut().zip(&acc[b * w..(b + 1) * w]) {
                *d = v as f32;
            }
        }
    }
    VoxelGrid::new(bins, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Event, Polarity};

    #[test]
    fn empty_stream_gives_zero_grid() {
        let s = EventStream::empty(4, 3, 0, 100).unwrap();
        let g = voxelize(&s, 13).unwrap();
        assert_eq!(g.shape(), (13, 3, 4));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn event_on_bin_centre() {
        // t_end = 1200, B = 13: bin k sits at t = 100·k
        let s = EventStream::new(4, 4, 0, 1200, vec![Event::new(500, 2, 1, Polarity::Positive)]).unwrap();
        let g = voxelize(&s, 13).unwrap();
        assert_eq!(g.at(5, 1, 2), 1.0);
        assert_eq!(g.total(), 1.0);
        assert_eq!(g.data().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn bilinear_split() {
        // τ = 75·12/400 = 2.25
        let s = EventStream::new(2, 2, 0, 400, vec![Event::new(75, 0, 0, Polarity::Negative)]).unwrap();
        let g = voxelize(&s, 13).unwrap();
        assert_eq!(g.at(2, 0, 0), -0.75);
        assert_eq!(g.at(3, 0, 0), -0.25);
    }

    #[test]
    fn last_bin_boundary() {
        let s = EventStream::new(2, 2, 10, 20, vec![Event::new(20, 1, 1, Polarity::Positive)]).unwrap();
        let g = voxelize(&s, 13).unwrap();
        assert_eq!(g.at(12, 1, 1), 1.0);
    }

    #[test]
    fn single_bin_is_polarity_sum() {
        let ev = vec![
            Event::new(0, 1, 0, Polarity::Positive),
            Event::new(0, 1, 0, Polarity::Positive),
            Event::new(0, 0, 1, Polarity::Negative),
        ];
        let s = EventStream::new(2, 2, 0, 0, ev).unwrap();
        let g = voxelize(&s, 1).unwrap();
        assert_eq!(g.data(), &[0.0, 2.0, -1.0, 0.0]);
    }

    #[test]
    fn zero_duration_with_many_bins_is_error() {
        let s = EventStream::empty(2, 2, 5, 5).unwrap();
        assert!(voxelize(&s, 13).is_err());
        assert!(voxelize(&s, 0).is_err());
    }
}
