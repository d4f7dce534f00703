use crate::error::{Error, Result};
use crate::numerics::{conv2d, conv2d_backward, sigmoid};
use crate::tensor::{FeatureTensor, Real};

use super::params::SceParams;

#[derive(Debug, Clone, PartialEq)]
pub struct SceOutput<T> {
    /// Spectral consistency map, `C×H×W`, strictly inside (0, 1).
    pub m_c: FeatureTensor<T>,
    pub f_b_c: FeatureTensor<T>,
    pub f_e_c: FeatureTensor<T>,
}

/// Intermediates of [`sce_forward`] needed by the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct SceTrace<T> {
    x: FeatureTensor<T>,
    branches: FeatureTensor<T>,
}

fn check_inputs<T: Real>(f_b: &FeatureTensor<T>, f_e: &FeatureTensor<T>, p: &SceParams<T>) -> Result<()> {
    if !f_b.same_shape(f_e) {
        return Err(Error::Shape(format!("image features {:?} vs event features {:?}", f_b.shape(), f_e.shape())));
    }
    p.validate()?;
    if f_b.channels() != p.channels() {
        return Err(Error::Shape(format!("SCE built for {} channels, features have {}", p.channels(), f_b.channels())));
    }
    Ok(())
}

/// `X = [F_b, F_e]`, three depthwise branches, 1×1 aggregation, sigmoid;
/// then `F^c = [F, F ⊙ M^c]` for each modality.
pub fn sce_forward<T: Real>(f_b: &FeatureTensor<T>, f_e: &FeatureTensor<T>, p: &SceParams<T>) -> Result<SceOutput<T>> {
    Ok(sce_forward_traced(f_b, f_e, p)?.0)
}

pub(crate) fn sce_forward_traced<T: Real>(
    f_b: &FeatureTensor<T>,
    f_e: &FeatureTensor<T>,
    p: &SceParams<T>,
) -> Result<(SceOutput<T>, SceTrace<T>)> {
    check_inputs(f_b, f_e, p)?;
    let x = FeatureTensor::concat(&[f_b, f_e])?;
    let outs = p.depthwise.iter().map(|k| conv2d(&x, k)).collect::<Result<Vec<_>>>()?;
    let branches = FeatureTensor::concat(&outs.iter().collect::<Vec<_>>())?;
    let m_c = sigmoid(&conv2d(&branches, &p.aggregate)?);
    let f_b_c = FeatureTensor::concat(&[f_b, &f_b.mul(&m_c)?])?;
    let f_e_c = FeatureTensor::concat(&[f_e, &f_e.mul(&m_c)?])?;
    Ok((SceOutput { m_c, f_b_c, f_e_c }, SceTrace { x, branches }))
}

/// Gradients with respect to the SCE parameters and both inputs.
pub(crate) struct SceGrads<T> {
    pub params: SceParams<T>,
    pub f_b: FeatureTensor<T>,
    pub f_e: FeatureTensor<T>,
}

pub(crate) fn sce_backward<T: Real>(
    f_b: &FeatureTensor<T>,
    f_e: &FeatureTensor<T>,
    p: &SceParams<T>,
    out: &SceOutput<T>,
    trace: &SceTrace<T>,
    d_fbc: &FeatureTensor<T>,
    d_fec: &FeatureTensor<T>,
    d_mc: Option<&FeatureTensor<T>>,
) -> Result<SceGrads<T>> {
    let c = p.channels();
    if d_fbc.shape() != out.f_b_c.shape() || d_fec.shape() != out.f_e_c.shape() {
        return Err(Error::Shape("SCE upstream gradients do not match forward outputs".into()));
    }
    let m = &out.m_c;
    let b_parts = d_fbc.split(&[c, c])?;
    let e_parts = d_fec.split(&[c, c])?;
    let mut d_fb = b_parts[0].add(&b_parts[1].mul(m)?)?;
    let mut d_fe = e_parts[0].add(&e_parts[1].mul(m)?)?;
    let mut d_m = b_parts[1].mul(f_b)?.add(&e_parts[1].mul(f_e)?)?;
    if let Some(extra) = d_mc {
        if !extra.same_shape(m) {
            return Err(Error::Shape("consistency-map gradient shape".into()));
        }
        d_m.add_assign(extra);
    }
    let d_a = d_m.zip_map(m, |g, s| g * s * (T::one() - s))?;
    let agg = conv2d_backward(&trace.branches, &p.aggregate, &d_a)?;
    let d_branches = agg.input.split(&[2 * c, 2 * c, 2 * c])?;
    let mut grads = p.clone();
    set_grads(&mut grads.aggregate, agg.weights, agg.bias);
    let mut d_x = FeatureTensor::zeros(2 * c, f_b.height(), f_b.width());
    for ((k, gk), db) in p.depthwise.iter().zip(grads.depthwise.iter_mut()).zip(&d_branches) {
        let g = conv2d_backward(&trace.x, k, db)?;
        d_x.add_assign(&g.input);
        set_grads(gk, g.weights, g.bias);
    }
    zero_kernel(&mut grads.decode);
    let xs = d_x.split(&[c, c])?;
    d_fb.add_assign(&xs[0]);
    d_fe.add_assign(&xs[1]);
    Ok(SceGrads { params: grads, f_b: d_fb, f_e: d_fe })
}

pub(crate) fn set_grads<T: Real>(k: &mut crate::numerics::Kernel<T>, w: Vec<T>, b: Option<Vec<T>>) {
    k.weights_mut().copy_from_slice(&w);
    if let (Some(dst), Some(src)) = (k.bias_mut(), b) {
        dst.copy_from_slice(&src);
    }
}

pub(crate) fn zero_kernel<T: Real>(k: &mut crate::numerics::Kernel<T>) {
    k.weights_mut().iter_mut().for_each(|v| *v = T::zero());
    if let Some(b) = k.bias_mut() {
        b.iter_mut().for_each(|v| *v = T::zero());
    }
}
