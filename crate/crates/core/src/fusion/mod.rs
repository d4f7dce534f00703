//! Spectral consistency enhancement (SCE), cross-modal multi-order
//! interaction (CMI), their analytic backward passes, and the untrained
//! dual-branch network that hosts them at its bottleneck.

mod attention;
mod check;
mod cmi;
mod gradients;
mod mdednet;
mod params;
mod sce;

pub use attention::{
    cross_attention, cross_attention_backward, cross_attention_blocked, cross_attention_traced, AttentionGrads,
    AttentionTrace, Tokens, DEFAULT_QUERY_BLOCK,
};
pub use check::{fusion_grad_check, FusionCheckConfig};
pub use cmi::{cmi_forward, CmiOutput};
pub use gradients::{multi_order_gradients, MultiOrder, GRADIENT_EPS};
pub use mdednet::{mdednet_forward, mdednet_forward_observed, ChannelPlan, Decoder, Encoder, MdedNetParams, ResBlock};
pub use params::{CmiDirection, CmiParams, Parameters, SceParams, SCE_KERNEL_SIZES};
pub use sce::{sce_forward, SceOutput};

use crate::error::{Error, Result};
use crate::tensor::{FeatureTensor, Real};

/// Inputs and parameters of the composed `cmi ∘ sce` block. The same type
/// carries the gradients returned by [`fusion_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct FusionState<T = f64> {
    pub f_b: FeatureTensor<T>,
    pub f_e: FeatureTensor<T>,
    pub sce: SceParams<T>,
    pub cmi: CmiParams<T>,
}

impl<T: Real> Parameters<T> for FusionState<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[T])) {
        self.sce.visit(&params::join(prefix, "sce"), f);
        self.cmi.visit(&params::join(prefix, "cmi"), f);
        self.f_b.visit(&params::join(prefix, "input.f_b"), f);
        self.f_e.visit(&params::join(prefix, "input.f_e"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [T])) {
        self.sce.visit_mut(&params::join(prefix, "sce"), f);
        self.cmi.visit_mut(&params::join(prefix, "cmi"), f);
        self.f_b.visit_mut(&params::join(prefix, "input.f_b"), f);
        self.f_e.visit_mut(&params::join(prefix, "input.f_e"), f);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput<T> {
    pub m_c: FeatureTensor<T>,
    pub f_b_i: FeatureTensor<T>,
    pub f_e_i: FeatureTensor<T>,
}

/// Upstream gradients of a scalar loss with respect to the block outputs.
/// `m_c` is optional because only the consistency loss reads it.
#[derive(Debug, Clone)]
pub struct FusionUpstream<T> {
    pub f_b_i: FeatureTensor<T>,
    pub f_e_i: FeatureTensor<T>,
    pub m_c: Option<FeatureTensor<T>>,
}

pub fn fusion_forward<T: Real>(state: &FusionState<T>) -> Result<FusionOutput<T>> {
    let s = sce_forward(&state.f_b, &state.f_e, &state.sce)?;
    let c = cmi_forward(&s.f_b_c, &s.f_e_c, &state.cmi)?;
    Ok(FusionOutput { m_c: s.m_c, f_b_i: c.f_b_i, f_e_i: c.f_e_i })
}

/// Analytic gradient of `⟨upstream, fusion_forward(state)⟩` with respect to
/// every parameter and both inputs. The decode kernel is not on this path and
/// receives zero gradient.
pub fn fusion_backward<T: Real>(state: &FusionState<T>, upstream: &FusionUpstream<T>) -> Result<FusionState<T>> {
    let (s, trace) = sce::sce_forward_traced(&state.f_b, &state.f_e, &state.sce)?;
    let (c, h, w) = state.f_b.shape();
    let out_shape = (2 * c + state.cmi.dim(), h, w);
    if upstream.f_b_i.shape() != out_shape || upstream.f_e_i.shape() != out_shape {
        return Err(Error::Shape(format!(
            "upstream gradients {:?}/{:?}, forward produced {out_shape:?}",
            upstream.f_b_i.shape(),
            upstream.f_e_i.shape()
        )));
    }
    let cg = cmi::cmi_backward(&s.f_b_c, &s.f_e_c, &state.cmi, &upstream.f_b_i, &upstream.f_e_i)?;
    let sg =
        sce::sce_backward(&state.f_b, &state.f_e, &state.sce, &s, &trace, &cg.f_b_c, &cg.f_e_c, upstream.m_c.as_ref())?;
    Ok(FusionState { f_b: sg.f_b, f_e: sg.f_e, sce: sg.params, cmi: cg.params })
}

#[cfg(test)]
mod tests;
