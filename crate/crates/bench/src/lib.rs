//! Seeded workloads shared by the criterion benches.

use nirev_core::seed;
use nirev_core::{Event, EventStream, FeatureTensor, Frame, Polarity};
use rand::Rng;

/// A smooth textured frame, shifted by `dx` pixels.
pub fn textured_frame(w: usize, h: usize, dx: f64) -> Frame {
    Frame::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64 + dx, y as f64);
        0.5 + 0.2 * (x * 0.21).sin() * (y * 0.13).cos() + 0.15 * ((x + y) * 0.07).sin()
    })
    .expect("positive size")
}

/// `n` latent frames of a scene drifting one pixel per frame.
pub fn drifting_sequence(w: usize, h: usize, n: usize) -> Vec<Frame> {
    (0..n).map(|i| textured_frame(w, h, i as f64)).collect()
}

pub fn random_stream(seed: u64, n: usize, w: u32, h: u32) -> EventStream {
    let mut rng = seed::rng(seed);
    let t_end = 1_000_000;
    let events = (0..n)
        .map(|_| {
            let p = if rng.random_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(rng.random_range(0..=t_end), rng.random_range(0..w) as u16, rng.random_range(0..h) as u16, p)
        })
        .collect();
    EventStream::from_unsorted(w, h, 0, t_end, events).expect("in-bounds events")
}

pub fn random_tensor(seed: u64, c: usize, h: usize, w: usize) -> FeatureTensor<f32> {
    let mut rng = seed::rng(seed);
    FeatureTensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .expect("matching length")
}
