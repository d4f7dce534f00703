use std::cell::Cell;

use nirev_core::numerics::{conv2d, conv2d_strided, finite_diff_check, softmax_rows, Kernel};
use nirev_core::{seed, FeatureTensor};
use proptest::prelude::*;
use rand::Rng;

fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> FeatureTensor<f64> {
    FeatureTensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn random_kernel(rng: &mut impl Rng, out: usize, inp: usize, k: usize, bias: bool) -> Kernel<f64> {
    Kernel::new(
        out,
        inp,
        k,
        k,
        (0..out * inp * k * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias.then(|| (0..out).map(|_| rng.random_range(-1.0..1.0)).collect()),
    )
    .unwrap()
}

/// Dense zero-padded convolution, one output element at a time.
fn conv_oracle(x: &FeatureTensor<f64>, k: &Kernel<f64>, stride: usize) -> Vec<f64> {
    let (c, h, w) = x.shape();
    let [o, _, kh, kw] = k.weight_shape();
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = Vec::new();
    for oc in 0..o {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = k.bias().map_or(0.0, |b| b[oc]);
                for ic in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - (kh / 2) as isize;
                            let ix = (ox * stride + kx) as isize - (kw / 2) as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc +=
                                k.weights()[((oc * c + ic) * kh + ky) * kw + kx] * x.at(ic, iy as usize, ix as usize);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn scaling_kernel_doubles() {
    let x = random_tensor(&mut seed::rng(1), 1, 4, 6);
    let k = Kernel::new(1, 1, 1, 1, vec![2.0], Some(vec![0.0])).unwrap();
    let y = conv2d(&x, &k).unwrap();
    assert!(y.data().iter().zip(x.data()).all(|(a, b)| *a == 2.0 * b));
}

#[test]
fn zero_kernel_gives_bias() {
    let x = random_tensor(&mut seed::rng(2), 2, 5, 5);
    let k = Kernel::new(1, 2, 3, 3, vec![0.0; 18], Some(vec![0.7])).unwrap();
    assert!(conv2d(&x, &k).unwrap().data().iter().all(|&v| v == 0.7));
}

#[test]
fn random_conv_matches_nested_loops() {
    let mut rng = seed::rng(3);
    let x = random_tensor(&mut rng, 2, 5, 5);
    let k = random_kernel(&mut rng, 3, 2, 3, true);
    let y = conv2d(&x, &k).unwrap();
    assert_eq!(y.shape(), (3, 5, 5));
    for (a, b) in y.data().iter().zip(conv_oracle(&x, &k, 1)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn large_input_takes_the_same_values() {
    // big enough to leave the unfolded path
    let mut rng = seed::rng(4);
    let x = random_tensor(&mut rng, 16, 130, 130);
    let k = random_kernel(&mut rng, 2, 16, 3, true);
    for (a, b) in conv2d(&x, &k).unwrap().data().iter().zip(conv_oracle(&x, &k, 1)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn strided_conv_matches_oracle() {
    let mut rng = seed::rng(5);
    let x = random_tensor(&mut rng, 3, 7, 6);
    let k = random_kernel(&mut rng, 4, 3, 3, true);
    let y = conv2d_strided(&x, &k, 2).unwrap();
    assert_eq!(y.shape(), (4, 4, 3));
    for (a, b) in y.data().iter().zip(conv_oracle(&x, &k, 2)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn depthwise_conv_filters_each_channel_alone() {
    let mut rng = seed::rng(6);
    let x = random_tensor(&mut rng, 3, 6, 6);
    let w: Vec<f64> = (0..3 * 25).map(|_| rng.random_range(-1.0..1.0)).collect();
    let k = Kernel::depthwise(3, 5, w.clone(), None).unwrap();
    let y = conv2d(&x, &k).unwrap();
    for c in 0..3 {
        let xc = FeatureTensor::new(1, 6, 6, x.channel(c).to_vec()).unwrap();
        let kc = Kernel::new(1, 1, 5, 5, w[c * 25..(c + 1) * 25].to_vec(), None).unwrap();
        for (a, b) in y.channel(c).iter().zip(conv_oracle(&xc, &kc, 1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn bad_kernels_rejected() {
    let x = random_tensor(&mut seed::rng(7), 2, 4, 4);
    let even = Kernel::new(1, 2, 2, 2, vec![0.0; 8], None).unwrap();
    assert!(conv2d(&x, &even).is_err());
    let wrong_channels = Kernel::new(1, 3, 3, 3, vec![0.0; 27], None).unwrap();
    assert!(conv2d(&x, &wrong_channels).is_err());
    assert!(Kernel::new(1, 2, 3, 3, vec![0.0; 5], None).is_err());
}

#[test]
fn equal_row_is_uniform() {
    let p = softmax_rows(&[3.0f64; 5], 1, 5, 1.0).unwrap();
    assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn random_softmax_matches_direct_formula() {
    let mut rng = seed::rng(8);
    let m: Vec<f64> = (0..28).map(|_| rng.random_range(-3.0..3.0)).collect();
    let scale = 1.0 / 8f64.sqrt();
    let p = softmax_rows(&m, 4, 7, scale).unwrap();
    for r in 0..4 {
        let row = &m[r * 7..(r + 1) * 7];
        let z: f64 = row.iter().map(|v| (v * scale).exp()).sum();
        for c in 0..7 {
            assert!((p[r * 7 + c] - (row[c] * scale).exp() / z).abs() < 1e-12);
        }
        assert!((p[r * 7..(r + 1) * 7].iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn quadratic_gradient_is_exact() {
    let theta = [0.3, -1.2, 2.5, 0.0];
    let analytic: Vec<f64> = theta.iter().map(|t| 2.0 * t).collect();
    let r = finite_diff_check(|p| p.iter().map(|v| v * v).sum(), &theta, &analytic, 1e-5, 1e-4).unwrap();
    assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
    assert_eq!(r.checked, 4);
}

#[test]
fn scaled_gradient_is_flagged() {
    let theta = [0.3, -1.2, 2.5];
    let analytic: Vec<f64> = theta.iter().map(|t| 2.0 * t * 1.01).collect();
    let r = finite_diff_check(|p| p.iter().map(|v| v * v).sum(), &theta, &analytic, 1e-5, 1e-4).unwrap();
    assert!(!r.passed());
    assert!((r.max_rel_error - 0.01 / 1.01).abs() < 1e-6, "{}", r.max_rel_error);
}

#[test]
fn nondeterministic_program_refused() {
    let calls = Cell::new(0.0);
    let r = finite_diff_check(
        |p| {
            calls.set(calls.get() + 1.0);
            p[0] + calls.get()
        },
        &[1.0],
        &[1.0],
        1e-5,
        1e-4,
    );
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, k in prop::sample::select(vec![1usize, 3, 5, 7])) {
        let mut rng = seed::rng(seed);
        let x = random_tensor(&mut rng, 2, 6, 7);
        let y = random_tensor(&mut rng, 2, 6, 7);
        let ker = random_kernel(&mut rng, 3, 2, k, false);
        let combo = x.scale(a).add(&y.scale(b)).unwrap();
        let lhs = conv2d(&combo, &ker).unwrap();
        let rhs = conv2d(&x, &ker).unwrap().scale(a).add(&conv2d(&y, &ker).unwrap().scale(b)).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..20) {
        let mut rng = seed::rng(seed);
        let m: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-50.0..50.0)).collect();
        let p = softmax_rows(&m, rows, cols, 0.5).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        for r in p.chunks(cols) {
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn softmax_is_shift_invariant(seed in any::<u64>(), shift in -100.0f64..100.0) {
        let mut rng = seed::rng(seed);
        let m: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let shifted: Vec<f64> = m.iter().map(|v| v + shift).collect();
        let p = softmax_rows(&m, 3, 4, 1.0).unwrap();
        let q = softmax_rows(&shifted, 3, 4, 1.0).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
