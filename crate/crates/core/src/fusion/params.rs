use rand::Rng;

use crate::error::{Error, Result};
use crate::io::NamedTensor;
use crate::numerics::Kernel;
use crate::tensor::{FeatureTensor, Real};

/// Named, shaped visitation of every learnable value. Everything else
/// (counting, flattening, PRM1 export) is derived from the two visitors, so
/// parameter order is defined in exactly one place per type.
pub trait Parameters<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, _, v| n += v.len());
        n
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit("", &mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn assign_flat(&mut self, values: &[T]) -> Result<()> {
        let need = self.param_count();
        if values.len() != need {
            return Err(Error::Shape(format!("{} values supplied for {need} parameters", values.len())));
        }
        let mut pos = 0;
        self.visit_mut("", &mut |_, _, v| {
            v.copy_from_slice(&values[pos..pos + v.len()]);
            pos += v.len();
        });
        Ok(())
    }

    fn to_named(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        self.visit("", &mut |name, shape, v| {
            out.push(NamedTensor {
                name: name.to_string(),
                shape: shape.to_vec(),
                data: v.iter().map(|x| x.as_f64() as f32).collect(),
            })
        });
        out
    }

    /// Loads values by name; every parameter must be present with a matching shape.
    fn load_named(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let mut err = None;
        self.visit_mut("", &mut |name, shape, v| {
            if err.is_some() {
                return;
            }
            match tensors.iter().find(|t| t.name == name) {
                Some(t) if t.shape == shape => {
                    for (d, &s) in v.iter_mut().zip(&t.data) {
                        *d = T::of(s as f64);
                    }
                }
                Some(t) => {
                    err =
                        Some(Error::Shape(format!("parameter {name}: stored shape {:?}, expected {shape:?}", t.shape)))
                }
                None => err = Some(Error::format("PRM1", format!("missing parameter {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if let Some(v) = self.flatten().iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters", format!("non-finite value at flat index {v}")));
        }
        Ok(())
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Real> Parameters<T> for Kernel<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        f(&join(prefix, "weight"), &self.weight_shape(), self.weights());
        if let Some(b) = self.bias() {
            f(&join(prefix, "bias"), &[b.len()], b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        let shape = self.weight_shape();
        f(&join(prefix, "weight"), &shape, self.weights_mut());
        if let Some(b) = self.bias_mut() {
            let n = b.len();
            f(&join(prefix, "bias"), &[n], b);
        }
    }
}

impl<T: Real> Parameters<T> for FeatureTensor<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        let (c, h, w) = self.shape();
        f(prefix, &[c, h, w], self.data());
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        let (c, h, w) = self.shape();
        f(prefix, &[c, h, w], self.data_mut());
    }
}

/// Depthwise kernel sizes of the consistency branches.
pub const SCE_KERNEL_SIZES: [usize; 3] = [3, 5, 7];

/// Spectral-consistency parameters for `C`-channel features: three depthwise
/// branches over the `2C` concatenated input, a 1×1 aggregation `6C → C`, and
/// a 3×3 decode `C → 1` used only by the consistency loss.
#[derive(Debug, Clone, PartialEq)]
pub struct SceParams<T = f64> {
    pub depthwise: [Kernel<T>; 3],
    pub aggregate: Kernel<T>,
    pub decode: Kernel<T>,
}

impl<T: Real> SceParams<T> {
    pub fn zeros(channels: usize) -> Self {
        let c2 = 2 * channels;
        Self {
            depthwise: SCE_KERNEL_SIZES.map(|k| Kernel::zeros(c2, c2, c2, k, true)),
            aggregate: Kernel::zeros(channels, 3 * c2, 1, 1, true),
            decode: Kernel::zeros(1, channels, 1, 3, true),
        }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Self {
        let c2 = 2 * channels;
        Self {
            depthwise: SCE_KERNEL_SIZES.map(|k| Kernel::uniform(rng, c2, c2, c2, k, true)),
            aggregate: Kernel::uniform(rng, channels, 3 * c2, 1, 1, true),
            decode: Kernel::uniform(rng, 1, channels, 1, 3, true),
        }
    }

    pub fn channels(&self) -> usize {
        self.aggregate.out_channels()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        let ok = self
            .depthwise
            .iter()
            .zip(SCE_KERNEL_SIZES)
            .all(|(k, size)| k.is_depthwise() && k.in_channels() == 2 * c && k.k_h() == size && k.k_w() == size)
            && self.aggregate.in_channels() == 6 * c
            && self.aggregate.k_h() == 1
            && self.decode.in_channels() == c
            && self.decode.out_channels() == 1
            && self.decode.k_h() == 3;
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("SCE kernels inconsistent with {c} channels")))
        }
    }
}

impl<T: Real> Parameters<T> for SceParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (k, size) in self.depthwise.iter().zip(SCE_KERNEL_SIZES) {
            k.visit(&join(prefix, &format!("dw{size}")), f);
        }
        self.aggregate.visit(&join(prefix, "aggregate"), f);
        self.decode.visit(&join(prefix, "decode"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        for (k, size) in self.depthwise.iter_mut().zip(SCE_KERNEL_SIZES) {
            k.visit_mut(&join(prefix, &format!("dw{size}")), f);
        }
        self.aggregate.visit_mut(&join(prefix, "aggregate"), f);
        self.decode.visit_mut(&join(prefix, "decode"), f);
    }
}

/// One interaction direction: 1×1 query projections for gradient orders
/// 0, 1, 2, bias-free key projection, value projection, and order weights.
///
/// The key has no bias: a key bias shifts every score in a query row by the
/// same amount, which softmax ignores.
#[derive(Debug, Clone, PartialEq)]
pub struct CmiDirection<T = f64> {
    pub query: [Kernel<T>; 3],
    pub key: Kernel<T>,
    pub value: Kernel<T>,
    pub order_weights: [T; 3],
}

impl<T: Real> CmiDirection<T> {
    pub fn zeros(in_channels: usize, dim: usize) -> Self {
        Self {
            query: std::array::from_fn(|_| Kernel::zeros(dim, in_channels, 1, 1, true)),
            key: Kernel::zeros(dim, in_channels, 1, 1, false),
            value: Kernel::zeros(dim, in_channels, 1, 1, true),
            order_weights: [T::zero(); 3],
        }
    }

    /// Uniform `±1/√fan_in` projections; order weights start at 1/3 each.
    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, dim: usize) -> Self {
        Self {
            query: std::array::from_fn(|_| Kernel::uniform(rng, dim, in_channels, 1, 1, true)),
            key: Kernel::uniform(rng, dim, in_channels, 1, 1, false),
            value: Kernel::uniform(rng, dim, in_channels, 1, 1, true),
            order_weights: [T::of(1.0 / 3.0); 3],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.key.in_channels()
    }

    pub fn dim(&self) -> usize {
        self.key.out_channels()
    }

    fn validate(&self) -> Result<()> {
        let (cin, d) = (self.in_channels(), self.dim());
        let proj_ok = |k: &Kernel<T>| {
            k.in_channels() == cin && k.out_channels() == d && k.k_h() == 1 && k.k_w() == 1 && k.groups() == 1
        };
        if self.query.iter().all(proj_ok)
            && proj_ok(&self.key)
            && proj_ok(&self.value)
            && self.order_weights.iter().all(|w| w.is_finite())
        {
            Ok(())
        } else {
            Err(Error::Shape(format!("CMI projections inconsistent with {cin} -> {d}")))
        }
    }
}

impl<T: Real> Parameters<T> for CmiDirection<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        for (j, q) in self.query.iter().enumerate() {
            q.visit(&join(prefix, &format!("query{j}")), f);
        }
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        f(&join(prefix, "order_weights"), &[3], &self.order_weights);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        for (j, q) in self.query.iter_mut().enumerate() {
            q.visit_mut(&join(prefix, &format!("query{j}")), f);
        }
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        f(&join(prefix, "order_weights"), &[3], &mut self.order_weights);
    }
}

/// Both interaction directions. `event_out` queries with image-feature
/// gradients and attends over event features, producing `F^i_e`;
/// `image_out` is the mirror image producing `F^i_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmiParams<T = f64> {
    pub event_out: CmiDirection<T>,
    pub image_out: CmiDirection<T>,
}

impl<T: Real> CmiParams<T> {
    pub fn zeros(in_channels: usize, dim: usize) -> Self {
        Self { event_out: CmiDirection::zeros(in_channels, dim), image_out: CmiDirection::zeros(in_channels, dim) }
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, dim: usize) -> Self {
        Self {
            event_out: CmiDirection::init(rng, in_channels, dim),
            image_out: CmiDirection::init(rng, in_channels, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.event_out.dim()
    }

    pub fn validate(&self) -> Result<()> {
        self.event_out.validate()?;
        self.image_out.validate()?;
        if self.event_out.in_channels() != self.image_out.in_channels() || self.event_out.dim() != self.image_out.dim()
        {
            return Err(Error::Shape("CMI directions disagree on channel plan".into()));
        }
        Ok(())
    }
}

impl<T: Real> Parameters<T> for CmiParams<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.event_out.visit(&join(prefix, "event_out"), f);
        self.image_out.visit(&join(prefix, "image_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.event_out.visit_mut(&join(prefix, "event_out"), f);
        self.image_out.visit_mut(&join(prefix, "image_out"), f);
    }
}
