use crate::error::{Error, Result};
use crate::tensor::{FeatureTensor, Real};

pub fn relu<T: Real>(x: &FeatureTensor<T>) -> FeatureTensor<T> {
    x.map(|v| v.max(T::zero()))
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &FeatureTensor<T>) -> FeatureTensor<T> {
    x.map(sigmoid_scalar)
}

/// Row-wise softmax of `scale · m` for a row-major `rows × cols` matrix,
/// computed with per-row max subtraction.
pub fn softmax_rows<T: Real>(m: &[T], rows: usize, cols: usize, scale: T) -> Result<Vec<T>> {
    if m.len() != rows * cols {
        return Err(Error::Shape(format!("matrix length {} != {rows}x{cols}", m.len())));
    }
    if cols == 0 {
        return Err(Error::Shape("softmax over zero columns".into()));
    }
    let mut out = vec![T::zero(); m.len()];
    for (src, dst) in m.chunks_exact(cols).zip(out.chunks_exact_mut(cols)) {
        let max = src.iter().map(|&v| v * scale).fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s * scale - max).exp();
            total = total + *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    Ok(out)
}

/// Given probabilities `p = softmax(scale·s)` and `dL/dp`, returns `dL/ds`.
pub fn softmax_rows_backward<T: Real>(p: &[T], grad_p: &[T], cols: usize, scale: T) -> Vec<T> {
    let mut out = vec![T::zero(); p.len()];
    for ((pr, gr), dr) in p.chunks_exact(cols).zip(grad_p.chunks_exact(cols)).zip(out.chunks_exact_mut(cols)) {
        let dot: T = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &pv), &gv) in dr.iter_mut().zip(pr).zip(gr) {
            *d = scale * pv * (gv - dot);
        }
    }
    out
}

/// `a (n×k) · b (k×m)`, row-major.
pub fn matmul<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * m);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for l in 0..k {
            let av = a[i * k + l];
            for (o, &bv) in row.iter_mut().zip(&b[l * m..(l + 1) * m]) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `a (n×k) · bᵀ` where `b` is `m×k`, row-major.
pub fn matmul_transposed<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), m * k);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] = ar.iter().zip(&b[j * k..(j + 1) * k]).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}
