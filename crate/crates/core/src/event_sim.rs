//! Event generation from a latent frame sequence by log-intensity threshold
//! crossing, and homogeneous Poisson background-activity noise.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::{Event, EventStream, Frame, Polarity};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventSimConfig {
    /// Log-intensity change per event (positive polarity, and negative unless overridden).
    pub contrast_threshold: f64,
    /// Optional separate threshold for negative events. Off by default.
    pub negative_threshold: Option<f64>,
    /// Floor added before taking the logarithm.
    pub log_eps: f64,
    /// Minimum spacing between emitted events at one pixel, microseconds.
    pub refractory: u64,
    /// Time between consecutive latent frames, microseconds.
    pub frame_interval: u64,
}

impl Default for EventSimConfig {
    fn default() -> Self {
        Self { contrast_threshold: 0.15, negative_threshold: None, log_eps: 1e-3, refractory: 0, frame_interval: 1000 }
    }
}

impl EventSimConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = self.contrast_threshold;
        let neg = self.negative_threshold();
        if !(pos > 0.0 && pos.is_finite() && neg > 0.0 && neg.is_finite()) {
            return Err(Error::invalid("event config", "contrast thresholds must be finite and > 0"));
        }
        if !(self.log_eps > 0.0 && self.log_eps.is_finite()) {
            return Err(Error::invalid("event config", "log_eps must be finite and > 0"));
        }
        if self.frame_interval == 0 {
            return Err(Error::invalid("event config", "frame_interval must be > 0"));
        }
        Ok(())
    }

    pub fn negative_threshold(&self) -> f64 {
        self.negative_threshold.unwrap_or(self.contrast_threshold)
    }

    #[inline]
    pub fn log_intensity(&self, v: f64) -> f64 {
        (v + self.log_eps).ln()
    }
}

/// Simulates the events of a frame sequence, frame `k` at `k · frame_interval`.
///
/// Per pixel, log intensity is interpolated linearly between frames. The
/// reference level starts at the first frame's value and moves by exactly one
/// threshold per event, so `L₀ + Σ thresholds·p` always stays within one
/// threshold of the current log intensity (absent refractory suppression).
pub fn simulate_events(frames: &[Frame], cfg: &EventSimConfig) -> Result<EventStream> {
    cfg.validate()?;
    if frames.len() < 2 {
        return Err(Error::invalid("frame sequence", "needs at least 2 frames"));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    if let Some(k) = frames.iter().position(|f| !f.same_dims(&frames[0])) {
        return Err(Error::Shape(format!(
            "frame {k} is {}x{}, expected {w}x{h}",
            frames[k].width(),
            frames[k].height()
        )));
    }
    let t_end = (frames.len() as u64 - 1) * cfg.frame_interval;
    let w32 = u32::try_from(w).map_err(|_| Error::Shape("frame too wide".into()))?;
    let h32 = u32::try_from(h).map_err(|_| Error::Shape("frame too tall".into()))?;
    if w32 > u16::MAX as u32 + 1 || h32 > u16::MAX as u32 + 1 {
        return Err(Error::Shape("frame exceeds 16-bit event coordinates".into()));
    }

    let events: Vec<Event> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut row = Vec::new();
            let mut log = vec![0.0; frames.len()];
            for x in 0..w {
                for (l, f) in log.iter_mut().zip(frames) {
                    *l = cfg.log_intensity(f.at(x, y));
                }
                pixel_events(&log, cfg, x as u16, y as u16, &mut row);
            }
            row
        })
        .collect();
    EventStream::from_unsorted(w32, h32, 0, t_end, events)
}

fn pixel_events(log: &[f64], cfg: &EventSimConfig, x: u16, y: u16, out: &mut Vec<Event>) {
    let (c_pos, c_neg) = (cfg.contrast_threshold, cfg.negative_threshold());
    let base = log[0];
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    let level = |n_pos: u64, n_neg: u64| base + n_pos as f64 * c_pos - n_neg as f64 * c_neg;
    let mut last_emitted: Option<u64> = None;
    let dt = cfg.frame_interval as f64;

    for (k, pair) in log.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        if a == b {
            continue;
        }
        let t0 = k as u64 * cfg.frame_interval;
        loop {
            let (target, p) = if b > a {
                let target = level(n_pos + 1, n_neg);
                if b < target {
                    break;
                }
                n_pos += 1;
                (target, Polarity::Positive)
            } else {
                let target = level(n_pos, n_neg + 1);
                if b > target {
                    break;
                }
                n_neg += 1;
                (target, Polarity::Negative)
            };
            let frac = ((target - a) / (b - a)).clamp(0.0, 1.0);
            let t = t0 + ((frac * dt).floor() as u64).min(cfg.frame_interval);
            let suppressed = last_emitted.is_some_and(|last| t - last < cfg.refractory);
            if !suppressed {
                out.push(Event::new(t, x, y, p));
                last_emitted = Some(t);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Background events per pixel per second.
    pub rate: f64,
    pub seed: u64,
    /// Probability that a noise event is positive.
    pub polarity_balance: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { rate: 1.0, seed: 0, polarity_balance: 0.5 }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate >= 0.0 && self.rate.is_finite()) {
            return Err(Error::invalid("noise config", "rate must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.polarity_balance) {
            return Err(Error::invalid("noise config", "polarity_balance must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Adds per-pixel homogeneous Poisson noise over the stream's window. Clean
/// events are kept verbatim; the result is canonically sorted. Each pixel draws
/// from its own generator seeded by `mix(seed, pixel_index)`.
pub fn inject_noise(clean: &EventStream, cfg: &NoiseConfig) -> Result<EventStream> {
    cfg.validate()?;
    let expected = cfg.rate * clean.duration() as f64 * 1e-6;
    if expected == 0.0 {
        return Ok(clean.clone());
    }
    let poisson = Poisson::new(expected).map_err(|e| Error::invalid("noise config", e.to_string()))?;
    let (w, h) = (clean.width() as usize, clean.height() as usize);
    let (t0, t1) = (clean.t_start(), clean.t_end());
    let noise: Vec<Event> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut row = Vec::new();
            for x in 0..w {
                let mut rng = seed::rng(seed::mix(cfg.seed, (y * w + x) as u64));
                let n = poisson.sample(&mut rng) as u64;
                for _ in 0..n {
                    let t = rng.random_range(t0..=t1);
                    let p = if rng.random_bool(cfg.polarity_balance) { Polarity::Positive } else { Polarity::Negative };
                    row.push(Event::new(t, x as u16, y as u16, p));
                }
            }
            row
        })
        .collect();
    let mut events = clean.events().to_vec();
    events.extend(noise);
    EventStream::from_unsorted(clean.width(), clean.height(), t0, t1, events)
}
