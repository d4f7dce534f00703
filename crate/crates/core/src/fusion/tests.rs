use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureTensor<f64> {
    FeatureTensor::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0))
}

fn zero_state(rng: &mut ChaCha8Rng, c: usize, n: usize) -> FusionState<f64> {
    let mut cmi = CmiParams::zeros(2 * c, c);
    cmi.event_out.order_weights = [1.0 / 3.0; 3];
    cmi.image_out.order_weights = [1.0 / 3.0; 3];
    FusionState { f_b: random_tensor(rng, c, n, n), f_e: random_tensor(rng, c, n, n), sce: SceParams::zeros(c), cmi }
}

fn ones_upstream(c: usize, d: usize, n: usize) -> FusionUpstream<f64> {
    FusionUpstream {
        f_b_i: FeatureTensor::filled(2 * c + d, n, n, 1.0),
        f_e_i: FeatureTensor::filled(2 * c + d, n, n, 1.0),
        m_c: None,
    }
}

#[test]
fn zero_sce_is_half_gate() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s = zero_state(&mut rng, 3, 5);
    let out = sce_forward(&s.f_b, &s.f_e, &s.sce).unwrap();
    assert!(out.m_c.data().iter().all(|&v| v == 0.5));
    let half = s.f_b.scale(0.5);
    assert_eq!(out.f_b_c, FeatureTensor::concat(&[&s.f_b, &half]).unwrap());
}

#[test]
fn bias_gradients_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (c, n) = (2, 5);
    let s = zero_state(&mut rng, c, n);
    let g = fusion_backward(&s, &ones_upstream(c, c, n)).unwrap();
    let agg_bias = g.sce.aggregate.bias().unwrap();
    for ch in 0..c {
        let expect: f64 = 0.25 * (s.f_b.channel(ch).iter().sum::<f64>() + s.f_e.channel(ch).iter().sum::<f64>());
        assert!((agg_bias[ch] - expect).abs() < 1e-12, "{} vs {expect}", agg_bias[ch]);
    }
    for dir in [&g.cmi.event_out, &g.cmi.image_out] {
        for &b in dir.value.bias().unwrap() {
            assert!((b - (n * n) as f64).abs() < 1e-10);
        }
        for q in &dir.query {
            assert!(q.bias().unwrap().iter().all(|&b| b == 0.0));
        }
        assert!(dir.order_weights.iter().all(|&w| w == 0.0));
    }
    for k in &g.sce.depthwise {
        assert!(k.bias().unwrap().iter().all(|&b| b == 0.0));
    }
    assert!(g.f_b.data().iter().all(|&v| (v - 1.5).abs() < 1e-12));
}

#[test]
fn dead_paths_have_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (c, n) = (2, 4);
    let mut s = FusionState {
        f_b: FeatureTensor::zeros(c, n, n),
        f_e: FeatureTensor::zeros(c, n, n),
        sce: SceParams::init(&mut rng, c),
        cmi: CmiParams::init(&mut rng, 2 * c, c),
    };
    let up = FusionUpstream {
        f_b_i: random_tensor(&mut rng, 3 * c, n, n),
        f_e_i: random_tensor(&mut rng, 3 * c, n, n),
        m_c: None,
    };
    let g = fusion_backward(&s, &up).unwrap();
    assert!(g.cmi.event_out.query[2].weights().iter().all(|&v| v == 0.0));
    assert!(g.sce.decode.weights().iter().all(|&v| v == 0.0));

    s.f_b = random_tensor(&mut rng, c, n, n);
    s.cmi.event_out.order_weights[2] = 0.0;
    let g = fusion_backward(&s, &up).unwrap();
    let q2 = &g.cmi.event_out.query[2];
    assert!(q2.weights().iter().chain(q2.bias().unwrap()).all(|&v| v == 0.0));
    assert!(g.cmi.event_out.order_weights[2] != 0.0);
}

#[test]
fn gradient_check_small_instance() {
    let r = fusion_grad_check(11, &FusionCheckConfig::default()).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn upstream_shape_checked() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let s = zero_state(&mut rng, 2, 4);
    assert!(fusion_backward(&s, &ones_upstream(2, 3, 4)).is_err());
}

#[test]
fn plan_param_count_matches_visitor() {
    for plan in [ChannelPlan::default(), ChannelPlan { base: 4, bins: 5, attn_dim: Some(7) }] {
        let p = MdedNetParams::<f32>::init(&mut ChaCha8Rng::seed_from_u64(1), plan).unwrap();
        assert_eq!(p.param_count(), plan.param_count());
    }
}
