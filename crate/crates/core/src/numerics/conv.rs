use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{FeatureTensor, Real};

/// Convolution weights, laid out `[out][in / groups][k_h][k_w]`, with an
/// optional per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel<T = f64> {
    out_channels: usize,
    in_channels: usize,
    groups: usize,
    k_h: usize,
    k_w: usize,
    weights: Vec<T>,
    bias: Option<Vec<T>>,
}

impl<T: Real> Kernel<T> {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        k_h: usize,
        k_w: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        Self::grouped(out_channels, in_channels, 1, k_h, k_w, weights, bias)
    }

    /// One `k×k` filter per channel (`groups = channels`).
    pub fn depthwise(channels: usize, k: usize, weights: Vec<T>, bias: Option<Vec<T>>) -> Result<Self> {
        Self::grouped(channels, channels, channels, k, k, weights, bias)
    }

    pub fn grouped(
        out_channels: usize,
        in_channels: usize,
        groups: usize,
        k_h: usize,
        k_w: usize,
        weights: Vec<T>,
        bias: Option<Vec<T>>,
    ) -> Result<Self> {
        if groups == 0 || !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            return Err(Error::invalid(
                "kernel",
                format!("{groups} groups do not divide {in_channels} in / {out_channels} out channels"),
            ));
        }
        let expect = out_channels * (in_channels / groups) * k_h * k_w;
        if weights.len() != expect {
            return Err(Error::Shape(format!("kernel weights length {} != {expect}", weights.len())));
        }
        if let Some(b) = &bias {
            if b.len() != out_channels {
                return Err(Error::Shape(format!("bias length {} != {out_channels}", b.len())));
            }
        }
        let finite = weights.iter().chain(bias.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("kernel", "non-finite weight"));
        }
        Ok(Self { out_channels, in_channels, groups, k_h, k_w, weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, groups: usize, k: usize, with_bias: bool) -> Self {
        let n = out_channels * (in_channels / groups) * k * k;
        Self::grouped(
            out_channels,
            in_channels,
            groups,
            k,
            k,
            vec![T::zero(); n],
            with_bias.then(|| vec![T::zero(); out_channels]),
        )
        .expect("zero kernel is valid")
    }

    /// Weights and bias drawn uniformly from `±1/√fan_in`.
    pub fn uniform<R: Rng + ?Sized>(
        rng: &mut R,
        out_channels: usize,
        in_channels: usize,
        groups: usize,
        k: usize,
        with_bias: bool,
    ) -> Self {
        let mut kern = Self::zeros(out_channels, in_channels, groups, k, with_bias);
        let bound = 1.0 / ((in_channels / groups * k * k) as f64).sqrt();
        for w in kern.weights.iter_mut().chain(kern.bias.iter_mut().flatten()) {
            *w = T::of(rng.random_range(-bound..=bound));
        }
        kern
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn groups(&self) -> usize {
        self.groups
    }
    pub fn k_h(&self) -> usize {
        self.k_h
    }
    pub fn k_w(&self) -> usize {
        self.k_w
    }
    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels && self.groups > 1
    }
    pub fn weights(&self) -> &[T] {
        &self.weights
    }
    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }
    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }
    pub fn bias_mut(&mut self) -> Option<&mut [T]> {
        self.bias.as_deref_mut()
    }
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels / self.groups, self.k_h, self.k_w]
    }
    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> T {
        self.weights[((o * (self.in_channels / self.groups) + i) * self.k_h + ky) * self.k_w + kx]
    }

    pub fn cast<U: Real>(&self) -> Kernel<U> {
        Kernel {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            groups: self.groups,
            k_h: self.k_h,
            k_w: self.k_w,
            weights: self.weights.iter().map(|v| U::of(v.as_f64())).collect(),
            bias: self.bias.as_ref().map(|b| b.iter().map(|v| U::of(v.as_f64())).collect()),
        }
    }
}

fn check_conv(input_channels: usize, kernel: &Kernel<impl Real>) -> Result<()> {
    if kernel.in_channels != input_channels {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, tensor has {input_channels}",
            kernel.in_channels
        )));
    }
    if kernel.k_h.is_multiple_of(2) || kernel.k_w.is_multiple_of(2) {
        return Err(Error::invalid("kernel", format!("even kernel size {}x{} has no centre", kernel.k_h, kernel.k_w)));
    }
    Ok(())
}

/// Largest unfolded patch matrix (elements) built for small feature maps.
const IM2COL_LIMIT: usize = 1 << 22;

/// Unfolds zero-padded patches into a `(in·k_h·k_w) × (oh·ow)` matrix whose
/// rows follow the kernel's weight order.
fn im2col<T: Real>(input: &FeatureTensor<T>, kernel: &Kernel<T>, stride: usize, oh: usize, ow: usize) -> Vec<T> {
    let (c, h, w) = input.shape();
    let (ph, pw) = ((kernel.k_h / 2) as isize, (kernel.k_w / 2) as isize);
    let mut cols = vec![T::zero(); c * kernel.k_h * kernel.k_w * oh * ow];
    let mut r = 0;
    for i in 0..c {
        let src = input.channel(i);
        for ky in 0..kernel.k_h {
            for kx in 0..kernel.k_w {
                let dst = &mut cols[r * oh * ow..(r + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * stride) as isize + ky as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride) as isize + kx as isize - pw;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[iy as usize * w + ix as usize];
                        }
                    }
                }
                r += 1;
            }
        }
    }
    cols
}

/// Stride-1 convolution with "same" zero padding.
pub fn conv2d<T: Real>(input: &FeatureTensor<T>, kernel: &Kernel<T>) -> Result<FeatureTensor<T>> {
    conv2d_strided(input, kernel, 1)
}

/// Zero-padded convolution with padding `k/2`; output size is `ceil(H/stride)`.
pub fn conv2d_strided<T: Real>(
    input: &FeatureTensor<T>,
    kernel: &Kernel<T>,
    stride: usize,
) -> Result<FeatureTensor<T>> {
    check_conv(input.channels(), kernel)?;
    if stride == 0 {
        return Err(Error::invalid("stride", "must be at least 1"));
    }
    let (_, h, w) = input.shape();
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let (ph, pw) = ((kernel.k_h / 2) as isize, (kernel.k_w / 2) as isize);
    let in_per_group = kernel.in_channels / kernel.groups;
    let out_per_group = kernel.out_channels / kernel.groups;
    let mut out = vec![T::zero(); kernel.out_channels * oh * ow];

    let taps = in_per_group * kernel.k_h * kernel.k_w;
    if kernel.groups == 1 && taps * oh * ow <= IM2COL_LIMIT {
        let cols = im2col(input, kernel, stride, oh, ow);
        out.par_chunks_mut(oh * ow).enumerate().for_each(|(o, plane)| {
            let wrow = &kernel.weights[o * taps..(o + 1) * taps];
            for (r, &wv) in wrow.iter().enumerate() {
                for (d, &v) in plane.iter_mut().zip(&cols[r * oh * ow..(r + 1) * oh * ow]) {
                    *d = *d + wv * v;
                }
            }
            if let Some(b) = &kernel.bias {
                for d in plane.iter_mut() {
                    *d = *d + b[o];
                }
            }
        });
        return Ok(FeatureTensor::from_raw(kernel.out_channels, oh, ow, out));
    }

    // Each output channel is owned by exactly one task and summed in a fixed
    // (input channel, ky, kx) order, so results do not depend on thread count.
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(o, plane)| {
        let g = o / out_per_group;
        for i in 0..in_per_group {
            let src = input.channel(g * in_per_group + i);
            for ky in 0..kernel.k_h {
                for kx in 0..kernel.k_w {
                    let wv = kernel.w(o, i, ky, kx);
                    for oy in 0..oh {
                        let iy = (oy * stride) as isize + ky as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        // output columns whose tap lands inside the row
                        let shift = kx as isize - pw;
                        let lo = ((-shift).max(0) as usize).div_ceil(stride);
                        let hi = ((w as isize - shift).max(0) as usize).div_ceil(stride).min(ow);
                        if lo >= hi {
                            continue;
                        }
                        if stride == 1 {
                            let start = (lo as isize + shift) as usize;
                            for (d, &v) in dst[lo..hi].iter_mut().zip(&row[start..start + hi - lo]) {
                                *d = *d + wv * v;
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                                let ix = (ox * stride) as isize + shift;
                                *d = *d + wv * row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = &kernel.bias {
            for d in plane.iter_mut() {
                *d = *d + b[o];
            }
        }
    });
    Ok(FeatureTensor::from_raw(kernel.out_channels, oh, ow, out))
}

/// Gradients of a stride-1 "same" convolution.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: FeatureTensor<T>,
    pub weights: Vec<T>,
    pub bias: Option<Vec<T>>,
}

/// Backward pass of [`conv2d`] given the upstream gradient of its output.
pub fn conv2d_backward<T: Real>(
    input: &FeatureTensor<T>,
    kernel: &Kernel<T>,
    grad_out: &FeatureTensor<T>,
) -> Result<ConvGrads<T>> {
    check_conv(input.channels(), kernel)?;
    let (_, h, w) = input.shape();
    if grad_out.shape() != (kernel.out_channels, h, w) {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} does not match conv output ({}, {h}, {w})",
            grad_out.shape(),
            kernel.out_channels
        )));
    }
    let (ph, pw) = ((kernel.k_h / 2) as isize, (kernel.k_w / 2) as isize);
    let in_per_group = kernel.in_channels / kernel.groups;
    let out_per_group = kernel.out_channels / kernel.groups;
    let mut gin = vec![T::zero(); input.data().len()];
    let mut gw = vec![T::zero(); kernel.weights.len()];
    let plane = h * w;

    for o in 0..kernel.out_channels {
        let g = o / out_per_group;
        let go = grad_out.channel(o);
        for i in 0..in_per_group {
            let ic = g * in_per_group + i;
            let src = input.channel(ic);
            let gsrc = &mut gin[ic * plane..(ic + 1) * plane];
            for ky in 0..kernel.k_h {
                for kx in 0..kernel.k_w {
                    let widx = ((o * in_per_group + i) * kernel.k_h + ky) * kernel.k_w + kx;
                    let wv = kernel.weights[widx];
                    let mut acc = T::zero();
                    for y in 0..h {
                        let iy = y as isize + ky as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for x in 0..w {
                            let ix = x as isize + kx as isize - pw;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let ix = ix as usize;
                            let gv = go[y * w + x];
                            acc = acc + gv * src[iy * w + ix];
                            gsrc[iy * w + ix] = gsrc[iy * w + ix] + wv * gv;
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    let gb = kernel
        .bias
        .as_ref()
        .map(|_| (0..kernel.out_channels).map(|o| grad_out.channel(o).iter().copied().sum()).collect());
    Ok(ConvGrads { input: FeatureTensor::from_raw(input.channels(), h, w, gin), weights: gw, bias: gb })
}

/// Transposed 2×2 convolution with stride 2: each input pixel expands to a
/// 2×2 output block, doubling both spatial dimensions.
pub fn conv_transpose2x<T: Real>(input: &FeatureTensor<T>, kernel: &Kernel<T>) -> Result<FeatureTensor<T>> {
    if kernel.k_h != 2 || kernel.k_w != 2 || kernel.groups != 1 {
        return Err(Error::invalid("kernel", "transposed upsampling needs an ungrouped 2x2 kernel"));
    }
    if kernel.in_channels != input.channels() {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, tensor has {}",
            kernel.in_channels,
            input.channels()
        )));
    }
    let (cin, h, w) = input.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); kernel.out_channels * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(o, plane)| {
        let b = kernel.bias.as_ref().map_or(T::zero(), |b| b[o]);
        for y in 0..h {
            for x in 0..w {
                for ky in 0..2 {
                    for kx in 0..2 {
                        let mut acc = T::zero();
                        for i in 0..cin {
                            acc = acc + kernel.w(o, i, ky, kx) * input.at(i, y, x);
                        }
                        plane[(2 * y + ky) * ow + 2 * x + kx] = acc + b;
                    }
                }
            }
        }
    });
    Ok(FeatureTensor::from_raw(kernel.out_channels, oh, ow, out))
}
