use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{conv2d, conv2d_strided, conv_transpose2x, relu, Kernel};
use crate::tensor::{FeatureTensor, Real};
use crate::types::{Frame, VoxelGrid};

use super::params::{join, Parameters};
use super::{cmi_forward, sce_forward, CmiParams, SceParams};

/// Number of encoder/decoder scales; spatial size halves between scales.
pub const SCALES: usize = 3;
/// Residual blocks per scale.
pub const BLOCKS_PER_SCALE: usize = 2;

/// Channel widths of the dual-branch network: `base`, `2·base`, `4·base`
/// across the three scales, with fusion at the `4·base` bottleneck.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelPlan {
    pub base: usize,
    pub bins: usize,
    /// Attention dimension `d`; defaults to the bottleneck width.
    pub attn_dim: Option<usize>,
}

impl Default for ChannelPlan {
    fn default() -> Self {
        Self { base: 32, bins: crate::voxel::DEFAULT_BINS, attn_dim: None }
    }
}

impl ChannelPlan {
    pub fn validate(&self) -> Result<()> {
        if self.base == 0 || self.bins == 0 || self.attn_dim == Some(0) {
            return Err(Error::invalid("channel plan", format!("{self:?} has a zero width")));
        }
        Ok(())
    }

    pub fn width(&self, scale: usize) -> usize {
        self.base << scale
    }

    pub fn bottleneck(&self) -> usize {
        self.width(SCALES - 1)
    }

    pub fn dim(&self) -> usize {
        self.attn_dim.unwrap_or(self.bottleneck())
    }

    /// Parameter count derived from the layer arithmetic alone.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k * k + cout;
        let res_blocks: usize = (0..SCALES).map(|s| BLOCKS_PER_SCALE * 2 * conv(self.width(s), self.width(s), 3)).sum();
        let downs: usize = (0..SCALES - 1).map(|s| conv(self.width(s), self.width(s + 1), 3)).sum();
        let ups: usize = (0..SCALES - 1).map(|s| conv(self.width(s + 1), self.width(s), 2)).sum();
        let encoders = conv(1, self.base, 3) + conv(self.bins, self.base, 3) + 2 * (res_blocks + downs);
        let decoders = 2 * (res_blocks + ups) + conv(self.base, 1, 3) + conv(self.base, self.bins, 3);

        let c = self.bottleneck();
        let d = self.dim();
        let depthwise: usize = super::SCE_KERNEL_SIZES.iter().map(|k| 2 * c * k * k + 2 * c).sum();
        let sce = depthwise + conv(6 * c, c, 1) + conv(c, 1, 3);
        let direction = 3 * conv(2 * c, d, 1) + 2 * c * d + conv(2 * c, d, 1) + 3;
        let merges = 2 * conv(2 * c + d, c, 1);
        encoders + decoders + sce + 2 * direction + merges
    }
}

/// `x + conv₂(relu(conv₁(x)))` with 3×3 kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T = f64> {
    pub conv1: Kernel<T>,
    pub conv2: Kernel<T>,
}

impl<T: Real> ResBlock<T> {
    fn init<R: Rng + ?Sized>(rng: &mut R, c: usize) -> Self {
        Self { conv1: Kernel::uniform(rng, c, c, 1, 3, true), conv2: Kernel::uniform(rng, c, c, 1, 3, true) }
    }

    fn forward(&self, x: &FeatureTensor<T>) -> Result<FeatureTensor<T>> {
        let y = conv2d(&relu(&conv2d(x, &self.conv1)?), &self.conv2)?;
        x.add(&y)
    }
}

impl<T: Real> Parameters<T> for ResBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
    }
}

/// Head conv to `base` channels, then per scale two residual blocks; scales
/// are joined by stride-2 3×3 convolutions that double the width.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T = f64> {
    pub head: Kernel<T>,
    pub blocks: Vec<ResBlock<T>>,
    pub downs: Vec<Kernel<T>>,
}

impl<T: Real> Encoder<T> {
    fn init<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, plan: &ChannelPlan) -> Self {
        let head = Kernel::uniform(rng, plan.base, in_channels, 1, 3, true);
        let mut blocks = Vec::new();
        let mut downs = Vec::new();
        for s in 0..SCALES {
            for _ in 0..BLOCKS_PER_SCALE {
                blocks.push(ResBlock::init(rng, plan.width(s)));
            }
            if s + 1 < SCALES {
                downs.push(Kernel::uniform(rng, plan.width(s + 1), plan.width(s), 1, 3, true));
            }
        }
        Self { head, blocks, downs }
    }

    fn forward(
        &self,
        x: &FeatureTensor<T>,
        observe: &mut dyn FnMut(&str, &FeatureTensor<T>),
    ) -> Result<FeatureTensor<T>> {
        let mut h = conv2d(x, &self.head)?;
        observe("head", &h);
        for s in 0..SCALES {
            for b in &self.blocks[s * BLOCKS_PER_SCALE..(s + 1) * BLOCKS_PER_SCALE] {
                h = b.forward(&h)?;
            }
            observe(&format!("scale{s}"), &h);
            if s + 1 < SCALES {
                h = conv2d_strided(&h, &self.downs[s], 2)?;
            }
        }
        Ok(h)
    }
}

impl<T: Real> Parameters<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.head.visit(&join(prefix, "head"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        for (i, k) in self.downs.iter().enumerate() {
            k.visit(&join(prefix, &format!("down{i}")), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.head.visit_mut(&join(prefix, "head"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        for (i, k) in self.downs.iter_mut().enumerate() {
            k.visit_mut(&join(prefix, &format!("down{i}")), f);
        }
    }
}

/// Mirror of [`Encoder`]: two residual blocks per scale from the bottleneck
/// outwards, 2×2 transposed convolutions between scales, 3×3 tail.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<T = f64> {
    pub blocks: Vec<ResBlock<T>>,
    pub ups: Vec<Kernel<T>>,
    pub tail: Kernel<T>,
}

impl<T: Real> Decoder<T> {
    fn init<R: Rng + ?Sized>(rng: &mut R, out_channels: usize, plan: &ChannelPlan) -> Self {
        let mut blocks = Vec::new();
        let mut ups = Vec::new();
        for s in (0..SCALES).rev() {
            for _ in 0..BLOCKS_PER_SCALE {
                blocks.push(ResBlock::init(rng, plan.width(s)));
            }
            if s > 0 {
                ups.push(Kernel::uniform(rng, plan.width(s - 1), plan.width(s), 1, 2, true));
            }
        }
        let tail = Kernel::uniform(rng, out_channels, plan.base, 1, 3, true);
        Self { blocks, ups, tail }
    }

    fn forward(
        &self,
        x: &FeatureTensor<T>,
        observe: &mut dyn FnMut(&str, &FeatureTensor<T>),
    ) -> Result<FeatureTensor<T>> {
        let mut h = x.clone();
        for (i, chunk) in self.blocks.chunks(BLOCKS_PER_SCALE).enumerate() {
            for b in chunk {
                h = b.forward(&h)?;
            }
            observe(&format!("scale{}", SCALES - 1 - i), &h);
            if let Some(up) = self.ups.get(i) {
                h = conv_transpose2x(&h, up)?;
            }
        }
        conv2d(&h, &self.tail)
    }
}

impl<T: Real> Parameters<T> for Decoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        for (i, k) in self.ups.iter().enumerate() {
            k.visit(&join(prefix, &format!("up{i}")), f);
        }
        self.tail.visit(&join(prefix, "tail"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        for (i, k) in self.ups.iter_mut().enumerate() {
            k.visit_mut(&join(prefix, &format!("up{i}")), f);
        }
        self.tail.visit_mut(&join(prefix, "tail"), f);
    }
}

/// Untrained dual-branch deblurring/denoising network.
#[derive(Debug, Clone, PartialEq)]
pub struct MdedNetParams<T = f64> {
    pub plan: ChannelPlan,
    pub image_encoder: Encoder<T>,
    pub event_encoder: Encoder<T>,
    pub image_decoder: Decoder<T>,
    pub event_decoder: Decoder<T>,
    pub sce: SceParams<T>,
    pub cmi: CmiParams<T>,
    /// 1×1 projections of the interaction outputs back to the bottleneck width.
    pub merge_image: Kernel<T>,
    pub merge_event: Kernel<T>,
}

impl<T: Real> MdedNetParams<T> {
    pub fn init<R: Rng + ?Sized>(rng: &mut R, plan: ChannelPlan) -> Result<Self> {
        plan.validate()?;
        let c = plan.bottleneck();
        let d = plan.dim();
        Ok(Self {
            plan,
            image_encoder: Encoder::init(rng, 1, &plan),
            event_encoder: Encoder::init(rng, plan.bins, &plan),
            image_decoder: Decoder::init(rng, 1, &plan),
            event_decoder: Decoder::init(rng, plan.bins, &plan),
            sce: SceParams::init(rng, c),
            cmi: CmiParams::init(rng, 2 * c, d),
            merge_image: Kernel::uniform(rng, c, 2 * c + d, 1, 1, true),
            merge_event: Kernel::uniform(rng, c, 2 * c + d, 1, 1, true),
        })
    }

    pub fn cast<U: Real>(&self) -> MdedNetParams<U> {
        let mut out = MdedNetParams::<U>::init(&mut crate::seed::rng(0), self.plan).expect("plan validated");
        let flat: Vec<U> = self.flatten().into_iter().map(|v| U::of(v.as_f64())).collect();
        out.assign_flat(&flat).expect("same plan");
        out
    }
}

impl<T: Real> Parameters<T> for MdedNetParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.image_encoder.visit(&join(prefix, "image_encoder"), f);
        self.event_encoder.visit(&join(prefix, "event_encoder"), f);
        self.image_decoder.visit(&join(prefix, "image_decoder"), f);
        self.event_decoder.visit(&join(prefix, "event_decoder"), f);
        self.sce.visit(&join(prefix, "sce"), f);
        self.cmi.visit(&join(prefix, "cmi"), f);
        self.merge_image.visit(&join(prefix, "merge_image"), f);
        self.merge_event.visit(&join(prefix, "merge_event"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.image_encoder.visit_mut(&join(prefix, "image_encoder"), f);
        self.event_encoder.visit_mut(&join(prefix, "event_encoder"), f);
        self.image_decoder.visit_mut(&join(prefix, "image_decoder"), f);
        self.event_decoder.visit_mut(&join(prefix, "event_decoder"), f);
        self.sce.visit_mut(&join(prefix, "sce"), f);
        self.cmi.visit_mut(&join(prefix, "cmi"), f);
        self.merge_image.visit_mut(&join(prefix, "merge_image"), f);
        self.merge_event.visit_mut(&join(prefix, "merge_event"), f);
    }
}

pub fn mdednet_forward<T: Real>(
    blurry: &Frame,
    voxels: &VoxelGrid,
    p: &MdedNetParams<T>,
) -> Result<(Frame, VoxelGrid)> {
    mdednet_forward_observed(blurry, voxels, p, &mut |_, _| {})
}

/// Like [`mdednet_forward`], reporting every named intermediate tensor to
/// `observe` as it is produced.
pub fn mdednet_forward_observed<T: Real>(
    blurry: &Frame,
    voxels: &VoxelGrid,
    p: &MdedNetParams<T>,
    observe: &mut dyn FnMut(&str, &FeatureTensor<T>),
) -> Result<(Frame, VoxelGrid)> {
    let (w, h) = (blurry.width(), blurry.height());
    let (bins, vh, vw) = voxels.shape();
    if (vh, vw) != (h, w) {
        return Err(Error::Shape(format!("frame {w}x{h} vs voxel grid {vw}x{vh}")));
    }
    if bins != p.plan.bins {
        return Err(Error::Shape(format!("voxel grid has {bins} bins, network expects {}", p.plan.bins)));
    }
    let factor = 1 << (SCALES - 1);
    if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
        return Err(Error::Shape(format!("{w}x{h} is not a positive multiple of {factor}")));
    }
    let b_in = FeatureTensor::<T>::from_raw(1, h, w, blurry.data().iter().map(|&v| T::of(v)).collect());
    let e_in = FeatureTensor::<T>::from_raw(bins, h, w, voxels.data().iter().map(|&v| T::of(v as f64)).collect());

    let f_b = p.image_encoder.forward(&b_in, &mut |n, t| observe(&format!("image_encoder.{n}"), t))?;
    let f_e = p.event_encoder.forward(&e_in, &mut |n, t| observe(&format!("event_encoder.{n}"), t))?;
    let s = sce_forward(&f_b, &f_e, &p.sce)?;
    observe("sce.m_c", &s.m_c);
    let c = cmi_forward(&s.f_b_c, &s.f_e_c, &p.cmi)?;
    observe("cmi.f_b_i", &c.f_b_i);
    observe("cmi.f_e_i", &c.f_e_i);
    let dec_b_in = f_b.add(&conv2d(&c.f_e_i, &p.merge_event)?)?;
    let dec_e_in = f_e.add(&conv2d(&c.f_b_i, &p.merge_image)?)?;
    let s_res = p.image_decoder.forward(&dec_b_in, &mut |n, t| observe(&format!("image_decoder.{n}"), t))?;
    let e_res = p.event_decoder.forward(&dec_e_in, &mut |n, t| observe(&format!("event_decoder.{n}"), t))?;
    observe("image_decoder.out", &s_res);
    observe("event_decoder.out", &e_res);

    let sharp: Vec<f64> = blurry.data().iter().zip(s_res.data()).map(|(&b, &r)| b + r.as_f64()).collect();
    if sharp.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("network output", "non-finite sharp prediction"));
    }
    let clean: Vec<f32> =
        voxels.data().iter().zip(e_res.data()).map(|(&v, &r)| (v as f64 + r.as_f64()) as f32).collect();
    if clean.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("network output", "non-finite voxel prediction"));
    }
    Ok((Frame::from_clamped(w, h, sharp)?, VoxelGrid::new(bins, h, w, clean)?))
}
