use crate::error::{Error, Result};
use crate::numerics::{matmul, matmul_transposed, softmax_rows, softmax_rows_backward};
use crate::tensor::{FeatureTensor, Real};

/// Row-major `rows × dim` token matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens<T = f64> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Tokens<T> {
    pub fn new(rows: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(Error::Shape(format!("token data length {} != {rows}x{dim}", data.len())));
        }
        Ok(Self { rows, dim, data })
    }

    /// One token per spatial position, channels as features.
    pub fn from_tensor(t: &FeatureTensor<T>) -> Self {
        let (c, h, w) = t.shape();
        let n = h * w;
        let mut data = vec![T::zero(); n * c];
        for ch in 0..c {
            for (i, &v) in t.channel(ch).iter().enumerate() {
                data[i * c + ch] = v;
            }
        }
        Self { rows: n, dim: c, data }
    }

    pub fn to_tensor(&self, height: usize, width: usize) -> Result<FeatureTensor<T>> {
        if height * width != self.rows {
            return Err(Error::Shape(format!("{} tokens cannot fill {height}x{width}", self.rows)));
        }
        Ok(FeatureTensor::from_fn(self.dim, height, width, |c, y, x| self.data[(y * width + x) * self.dim + c]))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn data(&self) -> &[T] {
        &self.data
    }
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

fn check(q: &Tokens<impl Real>, k: &Tokens<impl Real>, v: &Tokens<impl Real>) -> Result<()> {
    if q.dim != k.dim || k.dim != v.dim || k.rows != v.rows || k.rows == 0 {
        return Err(Error::Shape(format!(
            "attention dims q {}x{}, k {}x{}, v {}x{}",
            q.rows, q.dim, k.rows, k.dim, v.rows, v.dim
        )));
    }
    Ok(())
}

/// Query rows processed per block in [`cross_attention`].
pub const DEFAULT_QUERY_BLOCK: usize = 1024;

/// `softmax(q·kᵀ/√d)·v`, evaluated in blocks of query rows so the score matrix
/// never exceeds `block × M`. Every row is computed the same way regardless
/// of the block size.
pub fn cross_attention<T: Real>(q: &Tokens<T>, k: &Tokens<T>, v: &Tokens<T>) -> Result<Tokens<T>> {
    cross_attention_blocked(q, k, v, DEFAULT_QUERY_BLOCK)
}

pub fn cross_attention_blocked<T: Real>(
    q: &Tokens<T>,
    k: &Tokens<T>,
    v: &Tokens<T>,
    block: usize,
) -> Result<Tokens<T>> {
    check(q, k, v)?;
    let (d, m) = (q.dim, k.rows);
    let scale = T::one() / T::of(d as f64).sqrt();
    let block = block.max(1);
    let mut out = Vec::with_capacity(q.rows * d);
    for start in (0..q.rows).step_by(block) {
        let end = (start + block).min(q.rows);
        let qb = &q.data[start * d..end * d];
        let scores = matmul_transposed(qb, &k.data, end - start, d, m);
        let p = softmax_rows(&scores, end - start, m, scale)?;
        out.extend(matmul(&p, &v.data, end - start, m, d));
    }
    Tokens::new(q.rows, d, out)
}

/// Forward result kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace<T> {
    pub output: Tokens<T>,
    /// `N × M` attention probabilities.
    pub probs: Vec<T>,
}

pub fn cross_attention_traced<T: Real>(q: &Tokens<T>, k: &Tokens<T>, v: &Tokens<T>) -> Result<AttentionTrace<T>> {
    check(q, k, v)?;
    let (n, d, m) = (q.rows, q.dim, k.rows);
    let scale = T::one() / T::of(d as f64).sqrt();
    let scores = matmul_transposed(&q.data, &k.data, n, d, m);
    let probs = softmax_rows(&scores, n, m, scale)?;
    let output = Tokens::new(n, d, matmul(&probs, &v.data, n, m, d))?;
    Ok(AttentionTrace { output, probs })
}

pub struct AttentionGrads<T> {
    pub q: Tokens<T>,
    pub k: Tokens<T>,
    pub v: Tokens<T>,
}

pub fn cross_attention_backward<T: Real>(
    q: &Tokens<T>,
    k: &Tokens<T>,
    v: &Tokens<T>,
    trace: &AttentionTrace<T>,
    grad_out: &Tokens<T>,
) -> Result<AttentionGrads<T>> {
    check(q, k, v)?;
    let (n, d, m) = (q.rows, q.dim, k.rows);
    if grad_out.rows != n || grad_out.dim != d {
        return Err(Error::Shape("attention upstream gradient shape".into()));
    }
    let scale = T::one() / T::of(d as f64).sqrt();
    let p = &trace.probs;
    // dV = Pᵀ·dO
    let mut dv = vec![T::zero(); m * d];
    for i in 0..n {
        let go = grad_out.row(i);
        for j in 0..m {
            let pij = p[i * m + j];
            for (dst, &g) in dv[j * d..(j + 1) * d].iter_mut().zip(go) {
                *dst = *dst + pij * g;
            }
        }
    }
    let dp = matmul_transposed(&grad_out.data, &v.data, n, d, m);
    let ds = softmax_rows_backward(p, &dp, m, scale);
    let dq = matmul(&ds, &k.data, n, m, d);
    let mut dk = vec![T::zero(); m * d];
    for i in 0..n {
        let qi = q.row(i);
        for j in 0..m {
            let s = ds[i * m + j];
            for (dst, &qv) in dk[j * d..(j + 1) * d].iter_mut().zip(qi) {
                *dst = *dst + s * qv;
            }
        }
    }
    Ok(AttentionGrads { q: Tokens::new(n, d, dq)?, k: Tokens::new(m, d, dk)?, v: Tokens::new(m, d, dv)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tokens(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Tokens<f64> {
        Tokens::new(rows, dim, (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn constant_values_collapse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random_tokens(&mut rng, 5, 3);
        let k = random_tokens(&mut rng, 4, 3);
        let c = [0.25, -1.0, 2.0];
        let v = Tokens::new(4, 3, c.repeat(4)).unwrap();
        let o = cross_attention(&q, &k, &v).unwrap();
        for i in 0..5 {
            for (a, b) in o.row(i).iter().zip(c) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_tokens(&mut rng, 6, 2);
        let k = random_tokens(&mut rng, 1, 2);
        let v = random_tokens(&mut rng, 1, 2);
        let o = cross_attention(&q, &k, &v).unwrap();
        for i in 0..6 {
            assert_eq!(o.row(i), v.row(0));
        }
    }

    #[test]
    fn blocked_equals_unblocked_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_tokens(&mut rng, 37, 4);
        let k = random_tokens(&mut rng, 20, 4);
        let v = random_tokens(&mut rng, 20, 4);
        let a = cross_attention_blocked(&q, &k, &v, 1).unwrap();
        let b = cross_attention_blocked(&q, &k, &v, 8).unwrap();
        let c = cross_attention_traced(&q, &k, &v).unwrap().output;
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn dim_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_tokens(&mut rng, 3, 2);
        let k = random_tokens(&mut rng, 3, 3);
        assert!(cross_attention(&q, &k, &k).is_err());
    }

    #[test]
    fn tensor_token_round_trip() {
        let t = FeatureTensor::<f64>::from_fn(3, 2, 4, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let tok = Tokens::from_tensor(&t);
        assert_eq!(tok.row(5), &[11.0, 111.0, 211.0]);
        assert_eq!(tok.to_tensor(2, 4).unwrap(), t);
    }
}
