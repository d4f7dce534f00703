use crate::tensor::{FeatureTensor, Real};

/// Smoothing term inside the first-order magnitude `√(dx² + dy² + ε²)`.
pub const GRADIENT_EPS: f64 = 1e-6;

/// Order-0, -1 and -2 responses of a feature tensor, plus the intermediate
/// stencil outputs needed for the backward pass.
#[derive(Debug, Clone)]
pub struct MultiOrder<T> {
    pub g0: FeatureTensor<T>,
    pub g1: FeatureTensor<T>,
    pub g2: FeatureTensor<T>,
    dx: Vec<T>,
    dy: Vec<T>,
    lap: Vec<T>,
}

/// Per channel, zero-padded: `g0 = f`; `g1 = √(dx² + dy² + ε²)` with central
/// differences `[−½, 0, ½]`; `g2 = |Δf|` with the 5-point Laplacian.
pub fn multi_order_gradients<T: Real>(f: &FeatureTensor<T>) -> MultiOrder<T> {
    let (c, h, w) = f.shape();
    let half = T::of(0.5);
    let four = T::of(4.0);
    let eps2 = T::of(GRADIENT_EPS * GRADIENT_EPS);
    let n = c * h * w;
    let (mut dx, mut dy, mut lap) = (vec![T::zero(); n], vec![T::zero(); n], vec![T::zero(); n]);
    let data = f.data();
    for ch in 0..c {
        let base = ch * h * w;
        let at = |y: isize, x: isize| -> T {
            if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                T::zero()
            } else {
                data[base + y as usize * w + x as usize]
            }
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = base + y as usize * w + x as usize;
                dx[i] = half * (at(y, x + 1) - at(y, x - 1));
                dy[i] = half * (at(y + 1, x) - at(y - 1, x));
                lap[i] = at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - four * at(y, x);
            }
        }
    }
    let g1 = dx.iter().zip(&dy).map(|(&a, &b)| (a * a + b * b + eps2).sqrt()).collect();
    let g2 = lap.iter().map(|v| v.abs()).collect();
    MultiOrder {
        g0: f.clone(),
        g1: FeatureTensor::from_raw(c, h, w, g1),
        g2: FeatureTensor::from_raw(c, h, w, g2),
        dx,
        dy,
        lap,
    }
}

impl<T: Real> MultiOrder<T> {
    /// Pulls upstream gradients of `(g0, g1, g2)` back to the input.
    pub fn backward(&self, d0: &FeatureTensor<T>, d1: &FeatureTensor<T>, d2: &FeatureTensor<T>) -> FeatureTensor<T> {
        let (c, h, w) = self.g0.shape();
        let half = T::of(0.5);
        let four = T::of(4.0);
        let mut out = d0.data().to_vec();
        let g1 = self.g1.data();
        for ch in 0..c {
            let base = ch * h * w;
            for y in 0..h {
                for x in 0..w {
                    let i = base + y * w + x;
                    let ddx = d1.data()[i] * self.dx[i] / g1[i];
                    let ddy = d1.data()[i] * self.dy[i] / g1[i];
                    let s = self.lap[i];
                    let sign = if s > T::zero() {
                        T::one()
                    } else if s < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    };
                    let dl = d2.data()[i] * sign;
                    if x + 1 < w {
                        out[i + 1] = out[i + 1] + half * ddx + dl;
                    }
                    if x > 0 {
                        out[i - 1] = out[i - 1] - half * ddx + dl;
                    }
                    if y + 1 < h {
                        out[i + w] = out[i + w] + half * ddy + dl;
                    }
                    if y > 0 {
                        out[i - w] = out[i - w] - half * ddy + dl;
                    }
                    out[i] = out[i] - four * dl;
                }
            }
        }
        FeatureTensor::from_raw(c, h, w, out)
    }
}
