use crate::error::{Error, Result};
use crate::numerics::{conv2d, conv2d_backward};
use crate::tensor::{FeatureTensor, Real};

use super::attention::{cross_attention, cross_attention_backward, cross_attention_traced, AttentionTrace, Tokens};
use super::gradients::{multi_order_gradients, MultiOrder};
use super::params::{CmiDirection, CmiParams};
use super::sce::set_grads;

#[derive(Debug, Clone, PartialEq)]
pub struct CmiOutput<T> {
    pub f_b_i: FeatureTensor<T>,
    pub f_e_i: FeatureTensor<T>,
}

fn check_inputs<T: Real>(f_b_c: &FeatureTensor<T>, f_e_c: &FeatureTensor<T>, p: &CmiParams<T>) -> Result<()> {
    if !f_b_c.same_shape(f_e_c) {
        return Err(Error::Shape(format!("CMI inputs {:?} vs {:?}", f_b_c.shape(), f_e_c.shape())));
    }
    p.validate()?;
    if f_b_c.channels() != p.event_out.in_channels() {
        return Err(Error::Shape(format!(
            "CMI built for {} input channels, features have {}",
            p.event_out.in_channels(),
            f_b_c.channels()
        )));
    }
    Ok(())
}

/// Queries from the gradients of `query_src`, keys and values from `kv_src`;
/// returns `[kv_src, Σ_j w_j · CA(Q_j, K, V)]`.
fn direction_forward<T: Real>(
    query_src: &FeatureTensor<T>,
    kv_src: &FeatureTensor<T>,
    p: &CmiDirection<T>,
) -> Result<FeatureTensor<T>> {
    let (_, h, w) = kv_src.shape();
    let mo = multi_order_gradients(query_src);
    let k = Tokens::from_tensor(&conv2d(kv_src, &p.key)?);
    let v = Tokens::from_tensor(&conv2d(kv_src, &p.value)?);
    let mut fused = vec![T::zero(); h * w * p.dim()];
    for ((g, proj), &wj) in [&mo.g0, &mo.g1, &mo.g2].into_iter().zip(&p.query).zip(&p.order_weights) {
        let q = Tokens::from_tensor(&conv2d(g, proj)?);
        let o = cross_attention(&q, &k, &v)?;
        for (dst, &val) in fused.iter_mut().zip(o.data()) {
            *dst = *dst + wj * val;
        }
    }
    let fused = Tokens::new(h * w, p.dim(), fused)?.to_tensor(h, w)?;
    FeatureTensor::concat(&[kv_src, &fused])
}

/// Both interaction directions: `F^i_e` attends from image-feature gradients
/// to event features, `F^i_b` from event-feature gradients to image features.
pub fn cmi_forward<T: Real>(
    f_b_c: &FeatureTensor<T>,
    f_e_c: &FeatureTensor<T>,
    p: &CmiParams<T>,
) -> Result<CmiOutput<T>> {
    check_inputs(f_b_c, f_e_c, p)?;
    Ok(CmiOutput {
        f_e_i: direction_forward(f_b_c, f_e_c, &p.event_out)?,
        f_b_i: direction_forward(f_e_c, f_b_c, &p.image_out)?,
    })
}

struct DirectionTrace<T> {
    mo: MultiOrder<T>,
    q: Vec<Tokens<T>>,
    k: Tokens<T>,
    v: Tokens<T>,
    attn: Vec<AttentionTrace<T>>,
}

fn direction_trace<T: Real>(
    query_src: &FeatureTensor<T>,
    kv_src: &FeatureTensor<T>,
    p: &CmiDirection<T>,
) -> Result<DirectionTrace<T>> {
    let mo = multi_order_gradients(query_src);
    let k = Tokens::from_tensor(&conv2d(kv_src, &p.key)?);
    let v = Tokens::from_tensor(&conv2d(kv_src, &p.value)?);
    let mut q = Vec::with_capacity(3);
    let mut attn = Vec::with_capacity(3);
    for (g, proj) in [&mo.g0, &mo.g1, &mo.g2].into_iter().zip(&p.query) {
        let qj = Tokens::from_tensor(&conv2d(g, proj)?);
        attn.push(cross_attention_traced(&qj, &k, &v)?);
        q.push(qj);
    }
    Ok(DirectionTrace { mo, q, k, v, attn })
}

pub(crate) struct DirectionGrads<T> {
    pub params: CmiDirection<T>,
    pub query_src: FeatureTensor<T>,
    pub kv_src: FeatureTensor<T>,
}

fn direction_backward<T: Real>(
    query_src: &FeatureTensor<T>,
    kv_src: &FeatureTensor<T>,
    p: &CmiDirection<T>,
    d_out: &FeatureTensor<T>,
) -> Result<DirectionGrads<T>> {
    let (cin, h, w) = kv_src.shape();
    let d = p.dim();
    if d_out.shape() != (cin + d, h, w) {
        return Err(Error::Shape("CMI upstream gradient does not match forward output".into()));
    }
    let tr = direction_trace(query_src, kv_src, p)?;
    let parts = d_out.split(&[cin, d])?;
    let mut d_kv = parts[0].clone();
    let d_fused = Tokens::from_tensor(&parts[1]);

    let mut grads = p.clone();
    let mut d_k = vec![T::zero(); h * w * d];
    let mut d_v = vec![T::zero(); h * w * d];
    let mut d_g = Vec::with_capacity(3);
    for j in 0..3 {
        let o = &tr.attn[j].output;
        grads.order_weights[j] = o.data().iter().zip(d_fused.data()).map(|(&a, &b)| a * b).sum();
        let wj = p.order_weights[j];
        let d_o = Tokens::new(h * w, d, d_fused.data().iter().map(|&g| wj * g).collect())?;
        let ag = cross_attention_backward(&tr.q[j], &tr.k, &tr.v, &tr.attn[j], &d_o)?;
        for (dst, &g) in d_k.iter_mut().zip(ag.k.data()) {
            *dst = *dst + g;
        }
        for (dst, &g) in d_v.iter_mut().zip(ag.v.data()) {
            *dst = *dst + g;
        }
        let g_src = [&tr.mo.g0, &tr.mo.g1, &tr.mo.g2][j];
        let cg = conv2d_backward(g_src, &p.query[j], &ag.q.to_tensor(h, w)?)?;
        set_grads(&mut grads.query[j], cg.weights, cg.bias);
        d_g.push(cg.input);
    }
    let kg = conv2d_backward(kv_src, &p.key, &Tokens::new(h * w, d, d_k)?.to_tensor(h, w)?)?;
    set_grads(&mut grads.key, kg.weights, kg.bias);
    let vg = conv2d_backward(kv_src, &p.value, &Tokens::new(h * w, d, d_v)?.to_tensor(h, w)?)?;
    set_grads(&mut grads.value, vg.weights, vg.bias);
    d_kv.add_assign(&kg.input);
    d_kv.add_assign(&vg.input);
    let d_q = tr.mo.backward(&d_g[0], &d_g[1], &d_g[2]);
    Ok(DirectionGrads { params: grads, query_src: d_q, kv_src: d_kv })
}

pub(crate) struct CmiGrads<T> {
    pub params: CmiParams<T>,
    pub f_b_c: FeatureTensor<T>,
    pub f_e_c: FeatureTensor<T>,
}

pub(crate) fn cmi_backward<T: Real>(
    f_b_c: &FeatureTensor<T>,
    f_e_c: &FeatureTensor<T>,
    p: &CmiParams<T>,
    d_fbi: &FeatureTensor<T>,
    d_fei: &FeatureTensor<T>,
) -> Result<CmiGrads<T>> {
    check_inputs(f_b_c, f_e_c, p)?;
    let e = direction_backward(f_b_c, f_e_c, &p.event_out, d_fei)?;
    let b = direction_backward(f_e_c, f_b_c, &p.image_out, d_fbi)?;
    let mut g_b = e.query_src;
    g_b.add_assign(&b.kv_src);
    let mut g_e = e.kv_src;
    g_e.add_assign(&b.query_src);
    Ok(CmiGrads { params: CmiParams { event_out: e.params, image_out: b.params }, f_b_c: g_b, f_e_c: g_e })
}
