//! Domain types. Constructors validate every invariant, so a value of any of
//! these types is always well formed.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Single-channel intensity image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!("frame data length {} != {width}x{height}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("frame", format!("value {} at index {i} outside [0, 1]", data[i])));
        }
        Ok(Self { width, height, data })
    }

    /// Builds a frame, clamping every value into `[0, 1]`. Non-finite values are rejected.
    pub fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            if v.is_finite() {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Self::new(width, height, data)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
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
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at a possibly out-of-range integer position; zero outside.
    #[inline]
    pub fn at_or_zero(&self, x: isize, y: isize) -> f64 {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            0.0
        } else {
            self.data[y as usize * self.width + x as usize]
        }
    }

    /// Bilinear sample at a sub-pixel position (pixel centres on integers),
    /// treating everything outside the frame as zero.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let mut acc = 0.0;
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            if wy == 0.0 {
                continue;
            }
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                if wx == 0.0 {
                    continue;
                }
                acc += wy * wx * self.at_or_zero(xi + dx, yi + dy);
            }
        }
        acc
    }

    /// Copy of the `w×h` region whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!("crop {w}x{h}+{x0}+{y0} exceeds {}x{}", self.width, self.height)));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self::from_raw(w, h, data))
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(i8)]
pub enum Polarity {
    Negative = -1,
    Positive = 1,
}

impl Polarity {
    pub fn as_i8(self) -> i8 {
        self as i8
    }

    pub fn as_f64(self) -> f64 {
        self as i8 as f64
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Negative => Polarity::Positive,
            Polarity::Positive => Polarity::Negative,
        }
    }
}

impl TryFrom<i8> for Polarity {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(Error::invalid("polarity", format!("{other} is not -1 or +1"))),
        }
    }
}

/// One event: timestamp in microseconds, pixel position, polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: Polarity) -> Self {
        Self { t, x, y, p }
    }

    /// Canonical order: time, then row, column, polarity.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.t, self.y, self.x, self.p).cmp(&(other.t, other.y, other.x, other.p))
    }
}

/// Time-ordered events over a sensor of fixed geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u32,
    height: u32,
    t_start: u64,
    t_end: u64,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates and wraps events that are already in canonical order.
    pub fn new(width: u32, height: u32, t_start: u64, t_end: u64, events: Vec<Event>) -> Result<Self> {
        Self::check_geometry(width, height, t_start, t_end)?;
        for (i, e) in events.iter().enumerate() {
            Self::check_event(i, e, width, height, t_start, t_end)?;
            if i > 0 && events[i - 1].canonical_cmp(e) == Ordering::Greater {
                return Err(Error::Unsorted { index: i });
            }
        }
        Ok(Self { width, height, t_start, t_end, events })
    }

    /// Validates events in any order and sorts them canonically.
    pub fn from_unsorted(width: u32, height: u32, t_start: u64, t_end: u64, mut events: Vec<Event>) -> Result<Self> {
        Self::check_geometry(width, height, t_start, t_end)?;
        for (i, e) in events.iter().enumerate() {
            Self::check_event(i, e, width, height, t_start, t_end)?;
        }
        events.sort_unstable_by(Event::canonical_cmp);
        Ok(Self { width, height, t_start, t_end, events })
    }

    pub fn empty(width: u32, height: u32, t_start: u64, t_end: u64) -> Result<Self> {
        Self::new(width, height, t_start, t_end, Vec::new())
    }

    fn check_geometry(width: u32, height: u32, t_start: u64, t_end: u64) -> Result<()> {
        if width > u16::MAX as u32 + 1 || height > u16::MAX as u32 + 1 {
            return Err(Error::invalid("event stream", format!("sensor {width}x{height} exceeds 16-bit coordinates")));
        }
        if t_end < t_start {
            return Err(Error::invalid("event stream", format!("t_end {t_end} < t_start {t_start}")));
        }
        Ok(())
    }

    fn check_event(i: usize, e: &Event, width: u32, height: u32, t_start: u64, t_end: u64) -> Result<()> {
        if e.x as u32 >= width || e.y as u32 >= height {
            return Err(Error::OutOfBounds { index: i, x: e.x as u32, y: e.y as u32, width, height });
        }
        if e.t < t_start || e.t > t_end {
            return Err(Error::invalid("event", format!("event {i} time {} outside [{t_start}, {t_end}]", e.t)));
        }
        Ok(())
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn t_start(&self) -> u64 {
        self.t_start
    }
    pub fn t_end(&self) -> u64 {
        self.t_end
    }
    pub fn duration(&self) -> u64 {
        self.t_end - self.t_start
    }
    pub fn events(&self) -> &[Event] {
        &self.events
    }
    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
    pub fn len(&self) -> usize {
        self.events.len()
    }
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p.as_i8() as i64).sum()
    }
}

/// `bins × height × width` signed accumulation of event polarities.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    bins: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl VoxelGrid {
    pub fn new(bins: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != bins * height * width {
            return Err(Error::Shape(format!("voxel data length {} != {bins}x{height}x{width}", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("voxel grid", format!("non-finite value at index {i}")));
        }
        Ok(Self { bins, height, width, data })
    }

    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        Self { bins, height, width, data: vec![0.0; bins * height * width] }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.bins, self.height, self.width)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, bin: usize, y: usize, x: usize) -> f32 {
        self.data[(bin * self.height + y) * self.width + x]
    }

    /// Sum of all cells, accumulated in 64-bit.
    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}
