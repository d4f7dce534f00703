//! Motion-blur synthesis: a camera-shake trajectory moves a sharp frame
//! through a sequence of latent frames, whose mean is the blurry exposure.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::types::Frame;

/// Velocity damping of the shake random walk.
pub const VELOCITY_DAMPING: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurConfig {
    /// Latent frames per exposure.
    pub n_latent: usize,
    /// Radial clamp on the displacement, in pixels.
    pub max_displacement: f64,
    /// Std of the per-step velocity kick, in pixels/step.
    pub velocity_sigma: f64,
    pub seed: u64,
    /// Std of the Gaussian noise added to the blurry frame.
    pub noise_sigma: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self { n_latent: 16, max_displacement: 8.0, velocity_sigma: 0.5, seed: 0, noise_sigma: 0.01 }
    }
}

impl BlurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_latent < 2 {
            return Err(Error::invalid("blur config", "n_latent must be at least 2"));
        }
        for (name, v) in [
            ("velocity_sigma", self.velocity_sigma),
            ("noise_sigma", self.noise_sigma),
            ("max_displacement", self.max_displacement),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid("blur config", format!("{name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Sub-pixel displacement `(dx, dy)` for each latent frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, f64)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::invalid("trajectory", "needs at least 2 samples"));
        }
        if samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("trajectory", "non-finite displacement"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_displacement(&self) -> f64 {
        self.samples.iter().map(|(x, y)| x.hypot(*y)).fold(0.0, f64::max)
    }

    /// Dumps `index,dx,dy` rows under a header.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "index,dx,dy")?;
        for (i, (dx, dy)) in self.samples.iter().enumerate() {
            writeln!(w, "{i},{dx},{dy}")?;
        }
        Ok(())
    }
}

/// Damped Gaussian random walk on velocity, starting at rest at the origin:
/// `v ← 0.9·v + N(0, σ²)`, `pos ← pos + v`, with `pos` clamped radially to
/// `max_displacement`.
pub fn gen_trajectory(cfg: &BlurConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let kick = Normal::new(0.0, cfg.velocity_sigma).expect("sigma validated");
    let (mut vx, mut vy) = (0.0f64, 0.0f64);
    let (mut px, mut py) = (0.0f64, 0.0f64);
    let mut samples = Vec::with_capacity(cfg.n_latent);
    samples.push((0.0, 0.0));
    for _ in 1..cfg.n_latent {
        vx = VELOCITY_DAMPING * vx + kick.sample(&mut rng);
        vy = VELOCITY_DAMPING * vy + kick.sample(&mut rng);
        px += vx;
        py += vy;
        let r = px.hypot(py);
        if r > cfg.max_displacement {
            let s = if r > 0.0 { cfg.max_displacement / r } else { 0.0 };
            px *= s;
            py *= s;
        }
        samples.push((px, py));
    }
    Trajectory::new(samples)
}

/// Translates `sharp` by each trajectory sample with bilinear interpolation;
/// pixels sourced from outside the frame are zero.
pub fn render_sequence(sharp: &Frame, traj: &Trajectory) -> Vec<Frame> {
    traj.samples().iter().map(|&(dx, dy)| translate(sharp, dx, dy)).collect()
}

fn translate(frame: &Frame, dx: f64, dy: f64) -> Frame {
    if dx == 0.0 && dy == 0.0 {
        return frame.clone();
    }
    let (w, h) = (frame.width(), frame.height());
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(frame.sample_bilinear(x as f64 - dx, y as f64 - dy));
        }
    }
    Frame::from_clamped(w, h, data).expect("bilinear samples of a valid frame are finite")
}

/// Per-pixel arithmetic mean, the discrete form of integrating the latent
/// intensity over the exposure. Uses a running mean so that identical frames
/// reproduce themselves bit for bit.
pub fn average_blur(frames: &[Frame]) -> Result<Frame> {
    let first = frames.first().ok_or_else(|| Error::invalid("frame sequence", "empty"))?;
    let mut mean = first.data().to_vec();
    for (k, f) in frames.iter().enumerate().skip(1) {
        if !f.same_dims(first) {
            return Err(Error::Shape(format!(
                "frame {k} is {}x{}, expected {}x{}",
                f.width(),
                f.height(),
                first.width(),
                first.height()
            )));
        }
        let n = (k + 1) as f64;
        for (m, &v) in mean.iter_mut().zip(f.data()) {
            *m += (v - *m) / n;
        }
    }
    Frame::from_clamped(first.width(), first.height(), mean)
}

/// Adds `N(0, sigma²)` noise per pixel and clamps to `[0, 1]`.
pub fn add_frame_noise(frame: &Frame, sigma: f64, seed: u64) -> Result<Frame> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid("noise sigma", format!("{sigma} must be finite and >= 0")));
    }
    if sigma == 0.0 {
        return Ok(frame.clone());
    }
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma validated");
    let data = frame.data().iter().map(|&v| v + noise.sample(&mut rng)).collect();
    Frame::from_clamped(frame.width(), frame.height(), data)
}
