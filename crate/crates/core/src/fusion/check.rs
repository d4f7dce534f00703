use rand::Rng;

use crate::error::Result;
use crate::numerics::{finite_diff_check, GradCheckReport};
use crate::seed;
use crate::tensor::FeatureTensor;

use super::{fusion_backward, fusion_forward, CmiParams, FusionState, FusionUpstream, Parameters, SceParams};

#[derive(Debug, Clone, Copy)]
pub struct FusionCheckConfig {
    pub channels: usize,
    pub size: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for FusionCheckConfig {
    fn default() -> Self {
        Self { channels: 3, size: 6, step: 1e-5, tolerance: 1e-4 }
    }
}

fn uniform_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureTensor<f64> {
    FeatureTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

/// Builds a seeded random instance, takes the scalar loss
/// `⟨R_b, F^i_b⟩ + ⟨R_e, F^i_e⟩ + ⟨R_m, M^c⟩` with random weights `R`, and
/// compares the analytic gradient with central differences over every
/// parameter and input, in 64-bit arithmetic.
pub fn fusion_grad_check(seed: u64, cfg: &FusionCheckConfig) -> Result<GradCheckReport> {
    let mut rng = seed::rng(seed);
    let (c, n) = (cfg.channels, cfg.size);
    let d = c;
    let mut cmi = CmiParams::init(&mut rng, 2 * c, d);
    for dir in [&mut cmi.event_out, &mut cmi.image_out] {
        for w in dir.order_weights.iter_mut() {
            *w = rng.random_range(0.1..1.0);
        }
    }
    let state = FusionState {
        sce: SceParams::init(&mut rng, c),
        cmi,
        f_b: uniform_tensor(&mut rng, c, n, n),
        f_e: uniform_tensor(&mut rng, c, n, n),
    };
    let upstream = FusionUpstream {
        f_b_i: uniform_tensor(&mut rng, 2 * c + d, n, n),
        f_e_i: uniform_tensor(&mut rng, 2 * c + d, n, n),
        m_c: Some(uniform_tensor(&mut rng, c, n, n)),
    };
    let analytic = fusion_backward(&state, &upstream)?.flatten();
    let theta = state.flatten();
    let mut probe = state.clone();
    let loss = |t: &[f64]| -> f64 {
        probe.assign_flat(t).expect("flat length fixed");
        let out = fusion_forward(&probe).expect("shapes fixed");
        dot(&upstream.f_b_i, &out.f_b_i)
            + dot(&upstream.f_e_i, &out.f_e_i)
            + dot(upstream.m_c.as_ref().expect("set above"), &out.m_c)
    };
    finite_diff_check(loss, &theta, &analytic, cfg.step, cfg.tolerance)
}

fn dot(a: &FeatureTensor<f64>, b: &FeatureTensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
