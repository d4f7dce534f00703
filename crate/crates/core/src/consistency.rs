//! Binarized Sobel edges, the structural consistency target
//! `C = ½(1 − Sᵛ)(1 − Sⁿ) + Sᵛ·Sⁿ`, and the loss tying the predicted
//! consistency map to it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{conv2d, conv2d_backward, ConvGrads, Kernel};
use crate::tensor::{FeatureTensor, Real};
use crate::types::Frame;

/// Default gradient-magnitude threshold for edge binarization.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 0.1;

/// How the Sobel magnitude is binarized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum EdgeThreshold {
    Fixed(f64),
    /// Otsu's method over a 256-bin histogram of the magnitudes.
    Otsu,
}

impl Default for EdgeThreshold {
    fn default() -> Self {
        EdgeThreshold::Fixed(DEFAULT_EDGE_THRESHOLD)
    }
}

/// Binary edge map, values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("edge map length {} != {width}x{height}", data.len())));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("edge map", "values must be 0 or 1"));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel consistency in `[0, 1]`; exactly `{0, ½, 1}` when built from edge maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ConsistencyMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("consistency map length {} != {width}x{height}", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("consistency map", "values must lie in [0, 1]"));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// View as a frame, e.g. for PGM export.
    pub fn to_frame(&self) -> Frame {
        Frame::from_raw(self.width, self.height, self.data.clone())
    }

    /// Inverse of [`to_frame`](Self::to_frame) after quantized storage:
    /// every value snaps to the nearest of 0, ½, 1.
    pub fn from_frame(frame: &Frame) -> Self {
        let data = frame.data().iter().map(|&v| (v * 2.0).round() / 2.0).collect();
        Self { width: frame.width(), height: frame.height(), data }
    }
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Sobel gradient magnitude `√(Gx² + Gy²)`, zero-padded.
pub fn sobel_magnitude(frame: &Frame) -> Vec<f64> {
    let (w, h) = (frame.width(), frame.height());
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for (ky, (rx, ry)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                for kx in 0..3 {
                    let v = frame.at_or_zero(x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                    gx += rx[kx] * v;
                    gy += ry[kx] * v;
                }
            }
            out.push(gx.hypot(gy));
        }
    }
    out
}

/// Otsu threshold over a 256-bin histogram spanning `[0, max]`.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    const BINS: usize = 256;
    let mut hist = [0u64; BINS];
    for &v in values {
        let b = ((v / max) * (BINS - 1) as f64).round() as usize;
        hist[b.min(BINS - 1)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w_bg, mut sum_bg) = (0.0, 0.0);
    let (mut best, mut best_var) = (0usize, -1.0);
    for (i, &c) in hist.iter().enumerate() {
        w_bg += c as f64;
        sum_bg += i as f64 * c as f64;
        let w_fg = total - w_bg;
        if w_bg == 0.0 || w_fg == 0.0 {
            continue;
        }
        let m_bg = sum_bg / w_bg;
        let m_fg = (sum_all - sum_bg) / w_fg;
        let var = w_bg * w_fg * (m_bg - m_fg).powi(2);
        if var > best_var {
            best_var = var;
            best = i;
        }
    }
    // pixels in bins above `best` are edges
    (best as f64 + 0.5) / (BINS - 1) as f64 * max
}

/// Pixels whose Sobel magnitude strictly exceeds the threshold become 1.
pub fn sobel_edges(frame: &Frame, threshold: EdgeThreshold) -> Result<EdgeMap> {
    let mag = sobel_magnitude(frame);
    let t = match threshold {
        EdgeThreshold::Fixed(t) if t >= 0.0 && t.is_finite() => t,
        EdgeThreshold::Fixed(t) => {
            return Err(Error::invalid("edge threshold", format!("{t} must be finite and >= 0")))
        }
        EdgeThreshold::Otsu => otsu_threshold(&mag),
    };
    let data = mag.iter().map(|&m| u8::from(m > t)).collect();
    EdgeMap::new(frame.width(), frame.height(), data)
}

/// Pixelwise `½(1 − Sᵛ)(1 − Sⁿ) + Sᵛ·Sⁿ`.
pub fn structural_consistency(s_v: &EdgeMap, s_n: &EdgeMap) -> Result<ConsistencyMap> {
    if s_v.width != s_n.width || s_v.height != s_n.height {
        return Err(Error::Shape(format!("edge maps {}x{} and {}x{}", s_v.width, s_v.height, s_n.width, s_n.height)));
    }
    let data = s_v
        .data
        .iter()
        .zip(&s_n.data)
        .map(|(&v, &n)| {
            let (v, n) = (v as f64, n as f64);
            0.5 * (1.0 - v) * (1.0 - n) + v * n
        })
        .collect();
    ConsistencyMap::new(s_v.width, s_v.height, data)
}

fn decode<T: Real>(c: &ConsistencyMap, m_c: &FeatureTensor<T>, decode_kernel: &Kernel<T>) -> Result<FeatureTensor<T>> {
    if decode_kernel.out_channels() != 1 {
        return Err(Error::Shape(format!(
            "decode kernel must produce 1 channel, produces {}",
            decode_kernel.out_channels()
        )));
    }
    if m_c.height() != c.height || m_c.width() != c.width {
        return Err(Error::Shape(format!(
            "consistency map {}x{} vs features {}x{}",
            c.width,
            c.height,
            m_c.width(),
            m_c.height()
        )));
    }
    conv2d(m_c, decode_kernel)
}

/// Mean squared difference between `C` and `Ĉ = conv(M^c)`.
pub fn sc_loss<T: Real>(c: &ConsistencyMap, m_c: &FeatureTensor<T>, decode_kernel: &Kernel<T>) -> Result<T> {
    let c_hat = decode(c, m_c, decode_kernel)?;
    let n = T::of(c.data.len() as f64);
    let total: T = c_hat
        .data()
        .iter()
        .zip(&c.data)
        .map(|(&p, &t)| {
            let d = p - T::of(t);
            d * d
        })
        .sum();
    Ok(total / n)
}

/// Gradient of [`sc_loss`] with respect to `M^c` and the decode kernel.
pub fn sc_loss_backward<T: Real>(
    c: &ConsistencyMap,
    m_c: &FeatureTensor<T>,
    decode_kernel: &Kernel<T>,
) -> Result<ConvGrads<T>> {
    let c_hat = decode(c, m_c, decode_kernel)?;
    let scale = T::of(2.0 / c.data.len() as f64);
    let g = c_hat.data().iter().zip(&c.data).map(|(&p, &t)| scale * (p - T::of(t))).collect();
    let g = FeatureTensor::from_raw(1, c.height, c.width, g);
    conv2d_backward(m_c, decode_kernel, &g)
}
