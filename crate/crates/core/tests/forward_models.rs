use std::collections::HashMap;

use nirev_core::blur::{
    add_frame_noise, average_blur, gen_trajectory, render_sequence, BlurConfig, Trajectory, VELOCITY_DAMPING,
};
use nirev_core::event_sim::{inject_noise, simulate_events, EventSimConfig, NoiseConfig};
use nirev_core::{seed, EventStream, Frame, Polarity};
use proptest::prelude::*;
use rand::Rng;

fn random_frame(rng: &mut impl Rng, w: usize, h: usize) -> Frame {
    Frame::from_fn(w, h, |_, _| rng.random_range(0.0..1.0)).unwrap()
}

// ---- trajectories ----

#[test]
fn motionless_camera_gives_zero_trajectory() {
    let cfg = BlurConfig { velocity_sigma: 0.0, ..Default::default() };
    let t = gen_trajectory(&cfg).unwrap();
    assert_eq!(t.len(), cfg.n_latent);
    assert!(t.samples().iter().all(|&s| s == (0.0, 0.0)));
}

#[test]
fn trajectory_is_seed_deterministic() {
    let cfg = BlurConfig { seed: 99, ..Default::default() };
    assert_eq!(gen_trajectory(&cfg).unwrap(), gen_trajectory(&cfg).unwrap());
    let other = BlurConfig { seed: 100, ..cfg.clone() };
    assert_ne!(gen_trajectory(&cfg).unwrap(), gen_trajectory(&other).unwrap());
}

#[test]
fn ten_thousand_trajectories_respect_the_bound() {
    let cfg = BlurConfig { velocity_sigma: 2.0, max_displacement: 3.0, ..Default::default() };
    for s in 0..10_000u64 {
        let t = gen_trajectory(&BlurConfig { seed: s, ..cfg.clone() }).unwrap();
        assert_eq!(t.samples()[0], (0.0, 0.0));
        assert!(t.max_displacement() <= cfg.max_displacement + 1e-12, "seed {s}");
    }
}

#[test]
fn mean_step_matches_damped_walk_prediction() {
    // With the clamp out of reach, step k is the velocity v_k, whose components
    // are N(0, s_k²) with s_k² = σ²(1 − d^{2k})/(1 − d²). |v_k| is Rayleigh with
    // mean s_k·√(π/2).
    let sigma = 0.5;
    let n = 16;
    let cfg = BlurConfig { velocity_sigma: sigma, max_displacement: 1e9, n_latent: n, ..Default::default() };
    let d2 = VELOCITY_DAMPING * VELOCITY_DAMPING;
    let predicted: f64 = (1..n)
        .map(|k| (sigma * sigma * (1.0 - d2.powi(k as i32)) / (1.0 - d2)).sqrt() * (std::f64::consts::PI / 2.0).sqrt())
        .sum::<f64>()
        / (n - 1) as f64;

    let trials = 10_000;
    let per_traj: Vec<f64> = (0..trials as u64)
        .map(|s| {
            let t = gen_trajectory(&BlurConfig { seed: s, ..cfg.clone() }).unwrap();
            let p = t.samples();
            p.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum::<f64>() / (n - 1) as f64
        })
        .collect();
    let mean = per_traj.iter().sum::<f64>() / trials as f64;
    let var = per_traj.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let se = (var / trials as f64).sqrt();
    assert!((mean - predicted).abs() <= 3.0 * se, "mean step {mean} vs predicted {predicted} (se {se})");
}

// ---- rendering and averaging ----

#[test]
fn zero_trajectory_repeats_the_sharp_frame() {
    let f = random_frame(&mut seed::rng(1), 9, 7);
    let t = Trajectory::new(vec![(0.0, 0.0); 5]).unwrap();
    assert!(render_sequence(&f, &t).iter().all(|g| *g == f));
}

#[test]
fn integer_shift_moves_pixels_and_zeroes_the_border() {
    let f = random_frame(&mut seed::rng(2), 8, 6);
    let t = Trajectory::new(vec![(0.0, 0.0), (1.0, 0.0)]).unwrap();
    let seq = render_sequence(&f, &t);
    let g = &seq[1];
    for y in 0..6 {
        assert_eq!(g.at(0, y), 0.0);
        for x in 1..8 {
            assert_eq!(g.at(x, y), f.at(x - 1, y));
        }
    }
}

#[test]
fn half_pixel_shift_matches_bilinear_formula() {
    let f = Frame::from_fn(8, 3, |x, y| if y == 1 && (x == 3 || x == 4) { 1.0 } else { 0.0 }).unwrap();
    let t = Trajectory::new(vec![(0.0, 0.0), (0.5, 0.0)]).unwrap();
    let g = &render_sequence(&f, &t)[1];
    // output(x) = ½·input(x−1) + ½·input(x)
    for y in 0..3 {
        for x in 0..8 {
            let left = if x >= 1 { f.at(x - 1, y) } else { 0.0 };
            let expected = 0.5 * left + 0.5 * f.at(x, y);
            assert!((g.at(x, y) - expected).abs() < 1e-15, "({x},{y})");
        }
    }
    assert_eq!(g.at(3, 1), 0.5);
    assert_eq!(g.at(4, 1), 1.0);
    assert_eq!(g.at(5, 1), 0.5);
}

#[test]
fn uniform_shift_trajectory_blurs_to_one_translated_frame() {
    let f = random_frame(&mut seed::rng(3), 10, 10);
    let t = Trajectory::new(vec![(1.25, -0.5); 6]).unwrap();
    let seq = render_sequence(&f, &t);
    let b = average_blur(&seq).unwrap();
    for (a, e) in b.data().iter().zip(seq[0].data()) {
        assert!((a - e).abs() < 1e-15);
    }
}

#[test]
fn identical_frames_average_to_themselves() {
    let f = random_frame(&mut seed::rng(4), 6, 5);
    assert_eq!(average_blur(&vec![f.clone(); 9]).unwrap(), f);
}

#[test]
fn black_and_white_average_to_mid_gray() {
    let frames = [Frame::constant(4, 4, 0.0).unwrap(), Frame::constant(4, 4, 1.0).unwrap()];
    assert!(average_blur(&frames).unwrap().data().iter().all(|&v| v == 0.5));
}

#[test]
fn average_matches_scalar_mean_oracle() {
    let mut rng = seed::rng(5);
    let frames: Vec<Frame> = (0..7).map(|_| random_frame(&mut rng, 12, 9)).collect();
    let b = average_blur(&frames).unwrap();
    for i in 0..12 * 9 {
        let oracle = frames.iter().map(|f| f.data()[i]).sum::<f64>() / 7.0;
        assert!((b.data()[i] - oracle).abs() < 1e-12);
    }
}

#[test]
fn average_rejects_size_mismatch() {
    let frames = [Frame::constant(4, 4, 0.0).unwrap(), Frame::constant(4, 5, 0.0).unwrap()];
    assert!(average_blur(&frames).is_err());
}

#[test]
fn zero_sigma_noise_is_identity() {
    let f = random_frame(&mut seed::rng(6), 7, 7);
    assert_eq!(add_frame_noise(&f, 0.0, 123).unwrap(), f);
}

#[test]
fn frame_noise_statistics_over_a_million_pixels() {
    let n = 1_000_000usize;
    let f = Frame::constant(1000, 1000, 0.5).unwrap();
    let sigma = 0.05;
    let g = add_frame_noise(&f, sigma, 2024).unwrap();
    let mean = g.data().iter().sum::<f64>() / n as f64;
    let std = (g.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    assert!((std - sigma).abs() <= 0.01 * sigma, "std {std}");
    assert!((mean - 0.5).abs() <= 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    assert_eq!(add_frame_noise(&f, sigma, 2024).unwrap(), g);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn averaging_commutes_with_scaling(seed in any::<u64>(), a in 0.0f64..=1.0, n in 1usize..6) {
        let mut rng = seed::rng(seed);
        let frames: Vec<Frame> = (0..n).map(|_| random_frame(&mut rng, 5, 4)).collect();
        let scaled: Vec<Frame> = frames
            .iter()
            .map(|f| Frame::new(5, 4, f.data().iter().map(|v| a * v).collect()).unwrap())
            .collect();
        let lhs = average_blur(&scaled).unwrap();
        let rhs = average_blur(&frames).unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((l - a * r).abs() < 1e-12);
        }
    }

    #[test]
    fn rendered_and_blurred_frames_stay_in_range(seed in any::<u64>()) {
        let f = random_frame(&mut seed::rng(seed), 12, 12);
        let t = gen_trajectory(&BlurConfig { seed, velocity_sigma: 1.5, ..Default::default() }).unwrap();
        let seq = render_sequence(&f, &t);
        let b = add_frame_noise(&average_blur(&seq).unwrap(), 0.2, seed).unwrap();
        prop_assert!(seq.iter().chain([&b]).all(|g| g.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
}

// ---- event simulation ----

fn random_sequence(seed: u64, frames: usize, w: usize, h: usize) -> Vec<Frame> {
    let mut rng = seed::rng(seed);
    (0..frames).map(|_| random_frame(&mut rng, w, h)).collect()
}

fn per_pixel_sum(s: &EventStream) -> HashMap<(u16, u16), i64> {
    let mut m = HashMap::new();
    for e in s.events() {
        *m.entry((e.x, e.y)).or_insert(0) += e.p.as_i8() as i64;
    }
    m
}

#[test]
fn constant_sequence_emits_nothing() {
    let f = random_frame(&mut seed::rng(7), 16, 16);
    let s = simulate_events(&vec![f; 8], &EventSimConfig::default()).unwrap();
    assert!(s.is_empty());
}

#[test]
fn reconstruction_stays_within_one_threshold() {
    let cfg = EventSimConfig::default();
    for sd in 0..10u64 {
        let frames = random_sequence(sd, 8, 16, 16);
        let s = simulate_events(&frames, &cfg).unwrap();
        let sums = per_pixel_sum(&s);
        let last = frames.last().unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let l0 = cfg.log_intensity(frames[0].at(x, y));
                let n = sums.get(&(x as u16, y as u16)).copied().unwrap_or(0);
                let recon = l0 + cfg.contrast_threshold * n as f64;
                let target = cfg.log_intensity(last.at(x, y));
                assert!(
                    (recon - target).abs() < cfg.contrast_threshold,
                    "seed {sd} pixel ({x},{y}): {recon} vs {target}"
                );
            }
        }
    }
}

#[test]
fn event_times_lie_in_the_window_and_are_sorted() {
    let cfg = EventSimConfig::default();
    let s = simulate_events(&random_sequence(11, 5, 8, 8), &cfg).unwrap();
    assert_eq!(s.t_end(), 4 * cfg.frame_interval);
    assert!(s.events().windows(2).all(|w| w[0].canonical_cmp(&w[1]).is_le()));
    assert!(s.events().iter().all(|e| e.t <= s.t_end()));
}

#[test]
fn simulation_is_deterministic() {
    let frames = random_sequence(12, 6, 20, 10);
    let cfg = EventSimConfig::default();
    assert_eq!(simulate_events(&frames, &cfg).unwrap(), simulate_events(&frames, &cfg).unwrap());
}

#[test]
fn monotone_pixels_emit_one_polarity() {
    let mut rng = seed::rng(13);
    let w = 12;
    // even columns brighten, odd columns darken
    let base: Vec<f64> = (0..w * w).map(|_| rng.random_range(0.2..0.8)).collect();
    let steps: Vec<f64> = (0..w * w).map(|_| rng.random_range(0.0..0.03)).collect();
    let frames: Vec<Frame> = (0..8)
        .map(|k| {
            Frame::from_fn(w, w, |x, y| {
                let i = y * w + x;
                let dir = if x % 2 == 0 { 1.0 } else { -1.0 };
                base[i] + dir * k as f64 * steps[i]
            })
            .unwrap()
        })
        .collect();
    let s = simulate_events(&frames, &EventSimConfig::default()).unwrap();
    assert!(!s.is_empty());
    for e in s.events() {
        let expected = if e.x % 2 == 0 { Polarity::Positive } else { Polarity::Negative };
        assert_eq!(e.p, expected);
    }
}

#[test]
fn event_count_is_non_increasing_in_threshold() {
    let frames = random_sequence(14, 8, 16, 16);
    let mut prev = usize::MAX;
    for c in [0.05, 0.1, 0.15, 0.3, 0.6, 1.2] {
        let cfg = EventSimConfig { contrast_threshold: c, ..Default::default() };
        let n = simulate_events(&frames, &cfg).unwrap().len();
        assert!(n <= prev, "threshold {c}: {n} > {prev}");
        prev = n;
    }
}

#[test]
fn mismatched_frames_rejected() {
    let frames = [Frame::constant(4, 4, 0.1).unwrap(), Frame::constant(5, 4, 0.1).unwrap()];
    assert!(simulate_events(&frames, &EventSimConfig::default()).is_err());
}

#[test]
fn zero_rate_noise_is_identity() {
    let clean = simulate_events(&random_sequence(15, 4, 8, 8), &EventSimConfig::default()).unwrap();
    let cfg = NoiseConfig { rate: 0.0, ..Default::default() };
    assert_eq!(inject_noise(&clean, &cfg).unwrap(), clean);
}

#[test]
fn poisson_noise_count_matches_expectation() {
    // 100×100 pixels × 1 s × 1 event/s = 10⁴ expected
    let clean = EventStream::empty(100, 100, 0, 1_000_000).unwrap();
    let cfg = NoiseConfig { rate: 1.0, seed: 77, polarity_balance: 0.5 };
    let noisy = inject_noise(&clean, &cfg).unwrap();
    let n = noisy.len() as f64;
    assert!((n - 1e4).abs() <= 3.0 * 1e4f64.sqrt(), "count {n}");
}

#[test]
fn polarity_balance_extremes() {
    let clean = EventStream::empty(20, 20, 0, 1_000_000).unwrap();
    let pos = inject_noise(&clean, &NoiseConfig { rate: 5.0, seed: 1, polarity_balance: 1.0 }).unwrap();
    assert!(pos.events().iter().all(|e| e.p == Polarity::Positive));
    let neg = inject_noise(&clean, &NoiseConfig { rate: 5.0, seed: 1, polarity_balance: 0.0 }).unwrap();
    assert!(neg.events().iter().all(|e| e.p == Polarity::Negative));
}

fn multiset(s: &EventStream) -> HashMap<(u64, u16, u16, i8), usize> {
    let mut m = HashMap::new();
    for e in s.events() {
        *m.entry((e.t, e.x, e.y, e.p.as_i8())).or_insert(0) += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_keeps_every_clean_event(seed in any::<u64>(), rate in 0.0f64..2000.0) {
        let clean = simulate_events(&random_sequence(seed, 4, 8, 8), &EventSimConfig::default()).unwrap();
        let noisy = inject_noise(&clean, &NoiseConfig { rate, seed, polarity_balance: 0.5 }).unwrap();
        let (c, n) = (multiset(&clean), multiset(&noisy));
        for (k, count) in c {
            prop_assert!(n.get(&k).copied().unwrap_or(0) >= count);
        }
        prop_assert!(noisy.events().windows(2).all(|w| w[0].canonical_cmp(&w[1]).is_le()));
        prop_assert_eq!(inject_noise(&clean, &NoiseConfig { rate, seed, polarity_balance: 0.5 }).unwrap(), noisy);
    }
}
