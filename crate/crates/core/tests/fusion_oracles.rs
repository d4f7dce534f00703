use nirev_core::fusion::{
    cmi_forward, cross_attention, mdednet_forward, mdednet_forward_observed, multi_order_gradients, sce_forward,
    ChannelPlan, CmiDirection, CmiParams, MdedNetParams, Parameters, SceParams, Tokens,
};
use nirev_core::io::{read_params, write_params};
use nirev_core::numerics::conv2d;
use nirev_core::{seed, FeatureTensor, Frame, VoxelGrid};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureTensor<f64> {
    FeatureTensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_tokens(rng: &mut impl Rng, n: usize, d: usize, spread: f64) -> Tokens<f64> {
    Tokens::new(n, d, (0..n * d).map(|_| rng.random_range(-spread..spread)).collect()).unwrap()
}

/// softmax(q·kᵀ/√d)·v with every sum written out.
fn dense_attention(q: &Tokens<f64>, k: &Tokens<f64>, v: &Tokens<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = q.dim();
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Vec::new();
    let mut probs = Vec::new();
    for i in 0..q.rows() {
        let scores: Vec<f64> =
            (0..k.rows()).map(|j| q.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let p: Vec<f64> = e.iter().map(|x| x / z).collect();
        for c in 0..d {
            out.push((0..k.rows()).map(|j| p[j] * v.row(j)[c]).sum());
        }
        probs.push(p);
    }
    (out, probs)
}

// ---- attention ----

#[test]
fn attention_matches_dense_oracle() {
    let mut rng = seed::rng(1);
    let (q, k, v) =
        (random_tokens(&mut rng, 16, 8, 1.0), random_tokens(&mut rng, 16, 8, 1.0), random_tokens(&mut rng, 16, 8, 1.0));
    let got = cross_attention(&q, &k, &v).unwrap();
    let (oracle, probs) = dense_attention(&q, &k, &v);
    for (a, b) in got.data().iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-10);
    }
    for p in probs {
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn constant_values_collapse() {
    let mut rng = seed::rng(2);
    let (q, k) = (random_tokens(&mut rng, 9, 4, 3.0), random_tokens(&mut rng, 7, 4, 3.0));
    let c = [0.25, -1.5, 3.0, 0.0];
    let v = Tokens::new(7, 4, c.repeat(7)).unwrap();
    let out = cross_attention(&q, &k, &v).unwrap();
    for i in 0..9 {
        for (a, b) in out.row(i).iter().zip(&c) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

#[test]
fn mismatched_dims_rejected() {
    let mut rng = seed::rng(3);
    let q = random_tokens(&mut rng, 4, 3, 1.0);
    let k = random_tokens(&mut rng, 5, 4, 1.0);
    assert!(cross_attention(&q, &k, &k).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn output_stays_in_value_hull(seed in any::<u64>(), n in 1usize..12, m in 1usize..12, d in 1usize..6) {
        let mut rng = seed::rng(seed);
        let (q, k, v) = (random_tokens(&mut rng, n, d, 4.0), random_tokens(&mut rng, m, d, 4.0), random_tokens(&mut rng, m, d, 4.0));
        let out = cross_attention(&q, &k, &v).unwrap();
        for c in 0..d {
            let lo = (0..m).map(|j| v.row(j)[c]).fold(f64::INFINITY, f64::min);
            let hi = (0..m).map(|j| v.row(j)[c]).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..n {
                let x = out.row(i)[c];
                prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn joint_key_value_permutation_is_invisible(seed in any::<u64>(), m in 1usize..20) {
        let mut rng = seed::rng(seed);
        let d = 5;
        let (q, k, v) = (random_tokens(&mut rng, 8, d, 2.0), random_tokens(&mut rng, m, d, 2.0), random_tokens(&mut rng, m, d, 2.0));
        let mut perm: Vec<usize> = (0..m).collect();
        perm.shuffle(&mut rng);
        let pk = Tokens::new(m, d, perm.iter().flat_map(|&j| k.row(j).to_vec()).collect()).unwrap();
        let pv = Tokens::new(m, d, perm.iter().flat_map(|&j| v.row(j).to_vec()).collect()).unwrap();
        let a = cross_attention(&q, &k, &v).unwrap();
        let b = cross_attention(&q, &pk, &pv).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }
}

// ---- multi-order gradients ----

#[test]
fn gradients_match_stencil_oracle() {
    let mut rng = seed::rng(4);
    let f = random_tensor(&mut rng, 2, 5, 6);
    let mo = multi_order_gradients(&f);
    let px = |c: usize, y: isize, x: isize| {
        if y < 0 || x < 0 || y >= 5 || x >= 6 {
            0.0
        } else {
            f.at(c, y as usize, x as usize)
        }
    };
    for c in 0..2 {
        for y in 0..5isize {
            for x in 0..6isize {
                let dx = (px(c, y, x + 1) - px(c, y, x - 1)) / 2.0;
                let dy = (px(c, y + 1, x) - px(c, y - 1, x)) / 2.0;
                let lap = px(c, y, x + 1) + px(c, y, x - 1) + px(c, y + 1, x) + px(c, y - 1, x) - 4.0 * px(c, y, x);
                let (yu, xu) = (y as usize, x as usize);
                assert_eq!(mo.g0.at(c, yu, xu), f.at(c, yu, xu));
                assert!((mo.g1.at(c, yu, xu) - (dx * dx + dy * dy + 1e-12).sqrt()).abs() < 1e-14);
                assert!((mo.g2.at(c, yu, xu) - lap.abs()).abs() < 1e-14);
            }
        }
    }
}

#[test]
fn ramp_has_unit_slope_and_no_curvature() {
    let a = 0.3;
    let f = FeatureTensor::from_fn(1, 6, 8, |_, _, x| a * x as f64);
    let mo = multi_order_gradients(&f);
    for y in 1..5 {
        for x in 1..7 {
            assert!((mo.g1.at(0, y, x) - a).abs() < 1e-9);
            assert!(mo.g2.at(0, y, x).abs() < 1e-12);
        }
    }
}

// ---- SCE ----

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

#[test]
fn zero_sce_gates_at_one_half() {
    let mut rng = seed::rng(5);
    let (f_b, f_e) = (random_tensor(&mut rng, 3, 6, 6), random_tensor(&mut rng, 3, 6, 6));
    let out = sce_forward(&f_b, &f_e, &SceParams::zeros(3)).unwrap();
    assert!(out.m_c.data().iter().all(|&v| v == 0.5));
    let half = f_b.scale(0.5);
    assert_eq!(out.f_b_c, FeatureTensor::concat(&[&f_b, &half]).unwrap());
    let half_e = f_e.scale(0.5);
    assert_eq!(out.f_e_c, FeatureTensor::concat(&[&f_e, &half_e]).unwrap());
}

#[test]
fn sce_matches_compositional_oracle() {
    let mut rng = seed::rng(6);
    let c = 4;
    let (f_b, f_e) = (random_tensor(&mut rng, c, 8, 8), random_tensor(&mut rng, c, 8, 8));
    let p = SceParams::<f64>::init(&mut rng, c);
    let out = sce_forward(&f_b, &f_e, &p).unwrap();

    let x = FeatureTensor::concat(&[&f_b, &f_e]).unwrap();
    let b3 = conv2d(&x, &p.depthwise[0]).unwrap();
    let b5 = conv2d(&x, &p.depthwise[1]).unwrap();
    let b7 = conv2d(&x, &p.depthwise[2]).unwrap();
    let agg = conv2d(&FeatureTensor::concat(&[&b3, &b5, &b7]).unwrap(), &p.aggregate).unwrap();
    assert_eq!(agg.shape(), (c, 8, 8));
    for ch in 0..c {
        for y in 0..8 {
            for xx in 0..8 {
                let m = sigmoid(agg.at(ch, y, xx));
                assert!((out.m_c.at(ch, y, xx) - m).abs() <= 1e-10);
                assert!((out.f_b_c.at(ch, y, xx) - f_b.at(ch, y, xx)).abs() <= 1e-10);
                assert!((out.f_b_c.at(c + ch, y, xx) - f_b.at(ch, y, xx) * m).abs() <= 1e-10);
                assert!((out.f_e_c.at(c + ch, y, xx) - f_e.at(ch, y, xx) * m).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn sce_rejects_mismatched_features() {
    let mut rng = seed::rng(7);
    let (f_b, f_e) = (random_tensor(&mut rng, 2, 4, 4), random_tensor(&mut rng, 2, 4, 5));
    assert!(sce_forward(&f_b, &f_e, &SceParams::zeros(2)).is_err());
    let g = random_tensor(&mut rng, 3, 4, 4);
    assert!(sce_forward(&g, &g, &SceParams::zeros(2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn m_c_stays_open_unit_interval(seed in any::<u64>(), gain in 0.1f64..5.0) {
        let mut rng = seed::rng(seed);
        let (f_b, f_e) = (random_tensor(&mut rng, 2, 5, 5).scale(gain), random_tensor(&mut rng, 2, 5, 5).scale(gain));
        let out = sce_forward(&f_b, &f_e, &SceParams::init(&mut rng, 2)).unwrap();
        prop_assert!(out.m_c.data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert_eq!(out.f_b_c.channels(), 4);
        prop_assert_eq!(out.f_e_c.channels(), 4);
    }

    #[test]
    fn raising_a_pre_activation_never_lowers_m_c(seed in any::<u64>(), delta in 0.0f64..3.0, ch in 0usize..2) {
        let mut rng = seed::rng(seed);
        let (f_b, f_e) = (random_tensor(&mut rng, 2, 5, 5), random_tensor(&mut rng, 2, 5, 5));
        let p = SceParams::init(&mut rng, 2);
        let mut q = p.clone();
        q.aggregate.bias_mut().unwrap()[ch] += delta;
        let (a, b) = (sce_forward(&f_b, &f_e, &p).unwrap(), sce_forward(&f_b, &f_e, &q).unwrap());
        for (lo, hi) in a.m_c.channel(ch).iter().zip(b.m_c.channel(ch)) {
            prop_assert!(hi >= lo);
        }
        prop_assert_eq!(a.m_c.channel(1 - ch), b.m_c.channel(1 - ch));
    }
}

// ---- CMI ----

fn direction_oracle(
    query_src: &FeatureTensor<f64>,
    kv_src: &FeatureTensor<f64>,
    p: &CmiDirection<f64>,
) -> FeatureTensor<f64> {
    let (_, h, w) = kv_src.shape();
    let d = p.dim();
    let mo = multi_order_gradients(query_src);
    let k = Tokens::from_tensor(&conv2d(kv_src, &p.key).unwrap());
    let v = Tokens::from_tensor(&conv2d(kv_src, &p.value).unwrap());
    let mut fused = FeatureTensor::<f64>::zeros(d, h, w);
    for (j, g) in [&mo.g0, &mo.g1, &mo.g2].into_iter().enumerate() {
        let q = Tokens::from_tensor(&conv2d(g, &p.query[j]).unwrap());
        let (o, _) = dense_attention(&q, &k, &v);
        let o = Tokens::new(h * w, d, o).unwrap().to_tensor(h, w).unwrap();
        fused = fused.add(&o.scale(p.order_weights[j])).unwrap();
    }
    FeatureTensor::concat(&[kv_src, &fused]).unwrap()
}

fn random_cmi(rng: &mut impl Rng, cin: usize, d: usize) -> CmiParams<f64> {
    let mut p = CmiParams::init(rng, cin, d);
    for dir in [&mut p.event_out, &mut p.image_out] {
        for w in dir.order_weights.iter_mut() {
            *w = rng.random_range(0.1..1.0);
        }
    }
    p
}

#[test]
fn cmi_matches_compositional_oracle() {
    let mut rng = seed::rng(8);
    let (cin, d) = (6, 4);
    let (f_b_c, f_e_c) = (random_tensor(&mut rng, cin, 5, 4), random_tensor(&mut rng, cin, 5, 4));
    let p = random_cmi(&mut rng, cin, d);
    let out = cmi_forward(&f_b_c, &f_e_c, &p).unwrap();
    let e = direction_oracle(&f_b_c, &f_e_c, &p.event_out);
    let b = direction_oracle(&f_e_c, &f_b_c, &p.image_out);
    assert_eq!(out.f_e_i.shape(), (cin + d, 5, 4));
    assert_eq!(out.f_b_i.shape(), (cin + d, 5, 4));
    for (x, y) in out.f_e_i.data().iter().zip(e.data()) {
        assert!((x - y).abs() <= 1e-10);
    }
    for (x, y) in out.f_b_i.data().iter().zip(b.data()) {
        assert!((x - y).abs() <= 1e-10);
    }
}

#[test]
fn zero_order_weights_annihilate_the_fused_part() {
    let mut rng = seed::rng(9);
    let (cin, d) = (4, 3);
    let (f_b_c, f_e_c) = (random_tensor(&mut rng, cin, 4, 4), random_tensor(&mut rng, cin, 4, 4));
    let mut p = random_cmi(&mut rng, cin, d);
    p.event_out.order_weights = [0.0; 3];
    let out = cmi_forward(&f_b_c, &f_e_c, &p).unwrap();
    let expected = FeatureTensor::concat(&[&f_e_c, &FeatureTensor::zeros(d, 4, 4)]).unwrap();
    assert_eq!(out.f_e_i, expected);
}

#[test]
fn cmi_rejects_mismatched_inputs() {
    let mut rng = seed::rng(10);
    let p = random_cmi(&mut rng, 4, 2);
    let a = random_tensor(&mut rng, 4, 4, 4);
    assert!(cmi_forward(&a, &random_tensor(&mut rng, 4, 4, 3), &p).is_err());
    let wrong = random_tensor(&mut rng, 3, 4, 4);
    assert!(cmi_forward(&wrong, &wrong, &p).is_err());
}

// ---- dual-branch network ----

fn small_plan() -> ChannelPlan {
    ChannelPlan { base: 4, bins: 5, attn_dim: Some(6) }
}

fn inputs(seed: u64, size: usize, bins: usize) -> (Frame, VoxelGrid) {
    let mut rng = seed::rng(seed);
    let b = Frame::from_fn(size, size, |_, _| rng.random_range(0.0..1.0)).unwrap();
    let v = VoxelGrid::new(bins, size, size, (0..bins * size * size).map(|_| rng.random_range(-2.0f32..2.0)).collect())
        .unwrap();
    (b, v)
}

#[test]
fn network_outputs_have_input_shapes() {
    let plan = small_plan();
    let p = MdedNetParams::<f32>::init(&mut seed::rng(11), plan).unwrap();
    let (b, v) = inputs(12, 16, plan.bins);
    let (s, e) = mdednet_forward(&b, &v, &p).unwrap();
    assert_eq!((s.width(), s.height()), (16, 16));
    assert_eq!(e.shape(), (plan.bins, 16, 16));
}

#[test]
fn network_is_deterministic_and_finite_throughout() {
    let plan = small_plan();
    let p = MdedNetParams::<f64>::init(&mut seed::rng(13), plan).unwrap();
    let (b, v) = inputs(14, 12, plan.bins);
    let mut seen = Vec::new();
    let first = mdednet_forward_observed(&b, &v, &p, &mut |name, t| {
        assert!(t.is_finite(), "{name} not finite");
        seen.push(name.to_string());
    })
    .unwrap();
    assert!(seen.iter().any(|n| n == "sce.m_c"));
    let second = mdednet_forward(&b, &v, &p).unwrap();
    assert_eq!(first.0, second.0);
    assert!(first.1.data().iter().zip(second.1.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(first.1.data().iter().all(|v| v.is_finite()));
}

#[test]
fn network_rejects_bad_inputs() {
    let plan = small_plan();
    let p = MdedNetParams::<f32>::init(&mut seed::rng(15), plan).unwrap();
    let (b, v) = inputs(16, 16, plan.bins + 1);
    assert!(mdednet_forward(&b, &v, &p).is_err());
    let (b, v) = inputs(16, 14, plan.bins);
    assert!(mdednet_forward(&b, &v, &p).is_err());
    let (b, _) = inputs(16, 16, plan.bins);
    let (_, v) = inputs(16, 12, plan.bins);
    assert!(mdednet_forward(&b, &v, &p).is_err());
}

#[test]
fn parameter_count_matches_closed_form() {
    for plan in [small_plan(), ChannelPlan::default(), ChannelPlan { base: 8, bins: 13, attn_dim: None }] {
        let p = MdedNetParams::<f32>::init(&mut seed::rng(17), plan).unwrap();
        assert_eq!(p.param_count(), plan.param_count());
    }
}

#[test]
fn parameters_survive_a_prm_round_trip() {
    let plan = small_plan();
    let p = MdedNetParams::<f32>::init(&mut seed::rng(18), plan).unwrap();
    let mut buf = Vec::new();
    write_params(&p.to_named(), &mut buf).unwrap();
    let mut q = MdedNetParams::<f32>::init(&mut seed::rng(19), plan).unwrap();
    assert_ne!(p.flatten(), q.flatten());
    q.load_named(&read_params(buf.as_slice()).unwrap()).unwrap();
    assert_eq!(p.flatten(), q.flatten());

    let (b, v) = inputs(20, 16, plan.bins);
    assert_eq!(mdednet_forward(&b, &v, &p).unwrap().0, mdednet_forward(&b, &v, &q).unwrap().0);
}

#[test]
fn loading_with_a_missing_tensor_fails() {
    let plan = small_plan();
    let p = MdedNetParams::<f32>::init(&mut seed::rng(21), plan).unwrap();
    let mut named = p.to_named();
    named.pop();
    let mut q = p.clone();
    assert!(q.load_named(&named).is_err());
}
