use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_diff_check, loss_fn, ParamSet};
use crate::render::render_frame;
use crate::scene::{logit, OlatCapture};
use crate::testutil::{camera, light, random_points};

fn noise_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_data(w, h, (0..3 * w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn rgb_loss_examples() {
    let img = noise_image(12, 10, 1);
    let tape = Tape::new();
    let r = tape.constant(img.data.clone());
    assert!(rgb_loss(r, &img, 0.2).unwrap().item().abs() < 1e-15);

    let mut shifted = img.clone();
    for p in shifted.data.iter_mut().step_by(3) {
        *p += 0.1;
    }
    let pure = rgb_loss(r, &shifted, 0.0).unwrap().item();
    assert!((pure - 0.1 / 3.0).abs() < 1e-12);
    let mixed = rgb_loss(r, &shifted, 0.2).unwrap().item();
    assert!(mixed >= 0.8 * 0.1 / 3.0 - 1e-12);
    assert!(rgb_loss(tape.zeros(5), &img, 0.2).is_err());
}

#[test]
fn ssim_examples() {
    let x = noise_image(16, 16, 2);
    assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);

    let bin = Image::from_data(16, 16, (0..768).map(|i| ((i / 3 + i / 48) % 2) as f64).collect()).unwrap();
    let inv = Image::from_data(16, 16, bin.data.iter().map(|v| 1.0 - v).collect()).unwrap();
    assert!(ssim(&bin, &inv).unwrap() < 0.0);

    let a = Image::filled(16, 16, [0.5; 3]);
    let b = Image::filled(16, 16, [0.6; 3]);
    let expect = (2.0 * 0.5 * 0.6 + SSIM_C1) / (0.25 + 0.36 + SSIM_C1);
    assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-9);
    assert!((expect - 0.9837).abs() < 1e-3);
}

#[test]
fn sparse_examples() {
    let tape = Tape::new();
    let w = LossWeights::default();
    let half = tape.constant(vec![0.5; 7]);
    let v = sparse_losses(half, None, &w).item();
    assert!((v - w.opacity * 2f64.ln()).abs() < 1e-15);
    let edge = tape.constant(vec![0.0, 1.0, 1e-9, 1.0 - 1e-9]);
    let e = ENTROPY_CLAMP;
    let h = -(e * e.ln() + (1.0 - e) * (1.0 - e).ln());
    assert!((binary_entropy(edge).item() - h).abs() < 1e-15);
    assert!(h < 1.03e-3);
    let empty = tape.constant(vec![]);
    assert_eq!(sparse_losses(half, Some(empty), &w).item(), v);
    let both = sparse_losses(half, Some(half), &w).item();
    assert!((both - (w.opacity + w.visibility) * 2f64.ln()).abs() < 1e-15);
}

fn flat_points(n: usize) -> ParamSet {
    let pts: Vec<_> = (0..n)
        .map(|i| crate::scene::GaussianPoint {
            position: [i as f32, 0.0, 0.0],
            log_scale: [0.0, 0.0, -80.0],
            ..Default::default()
        })
        .collect();
    ParamSet::from_points(&pts)
}

#[test]
fn normal_loss_examples() {
    let tape = Tape::new();
    let ps = flat_points(3);
    let pv = PointVars::all(tape.leaf(ps.values.clone()));
    let w = LossWeights::default();
    let n: Vec<f64> = (0..4).flat_map(|_| [0.0, 0.0, 1.0]).collect();
    let anti: Vec<f64> = n.iter().map(|v| -v).collect();
    let pred = tape.constant(n.clone());

    assert!(normal_losses(pred, &n, &[1.0; 4], &pv, &w).unwrap().item() < 1e-30);
    let only_pred = LossWeights {
        normal_residual: 0.0,
        flatten: 0.0,
        ..w
    };
    let v = normal_losses(pred, &anti, &[1.0, 0.0, 1.0, 1.0], &pv, &only_pred).unwrap().item();
    assert!((v - w.normal_pred * 4.0).abs() < 1e-15);
    assert_eq!(normal_losses(pred, &anti, &[0.0; 4], &pv, &only_pred).unwrap().item(), 0.0);

    let mut res = ps.clone();
    res.get_mut(1, crate::autodiff::Attr::NormalOut)[0] = 0.3;
    let pv = PointVars::all(tape.leaf(res.values.clone()));
    let v = normal_losses(pred, &anti, &[0.0; 4], &pv, &w).unwrap().item();
    assert!((v - w.normal_residual * 0.09 / 3.0).abs() < 1e-15);
}

/// Direct 2D convolution with replicate padding.
fn reference_blur(img: &[f64], w: usize, h: usize, size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as isize;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let mut out = vec![0.0; img.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                        let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                        acc += taps[(dy + r) as usize] * taps[(dx + r) as usize] * img[3 * (sy * w + sx) + c];
                    }
                }
                out[3 * (y as usize * w + x as usize) + c] = acc / (norm * norm);
            }
        }
    }
    out
}

#[test]
fn smooth_loss_examples() {
    let tape = Tape::new();
    let stops = StopGrads::live();
    let c = tape.constant(vec![0.4; 3 * 64]);
    assert!(smooth_loss(&[c], 8, 8, 1.0, &stops).unwrap().item() < 1e-15);

    let mut imp = vec![0.0; 3 * 64];
    imp[3 * 27 + 1] = 1.0;
    let one = smooth_loss(&[tape.constant(imp.clone())], 8, 8, 1.0, &stops).unwrap().item();
    let two = smooth_loss(&[tape.constant(imp.iter().map(|v| 2.0 * v).collect())], 8, 8, 1.0, &stops)
        .unwrap()
        .item();
    assert!(one > 0.0);
    assert!((two - 2.0 * one).abs() < 1e-15);

    let board: Vec<f64> = (0..64).flat_map(|p| [((p % 8 + p / 8) % 2) as f64; 3]).collect();
    let blurred = reference_blur(&board, 8, 8, 9, 1.5);
    let expect: f64 = board.iter().zip(&blurred).map(|(a, b)| (a - b).abs()).sum::<f64>() / 192.0;
    let got = smooth_loss(&[tape.constant(board)], 8, 8, 0.1, &stops).unwrap().item();
    assert!((got - 0.1 * expect).abs() < 1e-12);
}

#[test]
fn smooth_loss_stop_gradient() {
    let x: Vec<f64> = noise_image(6, 5, 3).data;
    let make = |stops: &StopGrads| {
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let l = smooth_loss(&[v], 6, 5, 1.0, stops).unwrap();
        l.item()
    };
    let rec = StopGrads::record();
    make(&rec);
    let replay = rec.into_replay();
    let loss = loss_fn(|_t, p| {
        replay.rewind();
        smooth_loss(&[p], 6, 5, 1.0, &replay)
    });
    let r = finite_diff_check(&loss, &x, 1e-6, 90, 1).unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
    // The analytic gradient is exactly sign(x − blur(x)) / n.
    let tape = Tape::new();
    let p = tape.leaf(x.clone());
    let g = tape.grad(smooth_loss(&[p], 6, 5, 1.0, &StopGrads::live()).unwrap(), &[p]).unwrap()[0].to_vec();
    let b = BlurKernel::gaussian(6, 5, 3, 9, 1.5).apply(&x);
    for i in 0..x.len() {
        assert_eq!(g[i], (x[i] - b[i]).signum() / 90.0);
    }
}

#[test]
fn diffuse_prior_examples() {
    let tape = Tape::new();
    let stops = StopGrads::live();
    let v3 = |vals: [Vec<f64>; 3]| -> V3 { vals.map(|v| tape.constant(v)) };
    let d = v3([vec![0.1, 0.5], vec![0.2, 0.3], vec![0.7, 0.4]]);
    let a = v3([vec![0.2, 1.0], vec![0.4, 0.6], vec![1.4, 0.8]]);
    let s = diffuse_scale(&a, &d, &stops);
    for k in 0..3 {
        assert!((s[k].item() - 2.0).abs() < 1e-12);
    }
    assert!(diffuse_prior_loss(&a, &d, 1.0, &stops).item() < 1e-24);

    let a = v3([vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
    let d = v3([vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
    assert!((diffuse_scale(&a, &d, &stops)[0].item() - 0.5).abs() < 1e-15);
    assert!((diffuse_prior_loss(&a, &d, 1.0, &stops).item() - 0.25).abs() < 1e-15);

    let a = v3([vec![0.3, 0.1], vec![0.2, 0.0], vec![0.5, 0.4]]);
    let d = v3([vec![0.0; 2], vec![0.0; 2], vec![0.0; 2]]);
    assert_eq!(diffuse_scale(&a, &d, &stops)[1].item(), 0.0);
    let expect = (0.09 + 0.04 + 0.25 + 0.01 + 0.0 + 0.16) / 2.0;
    assert!((diffuse_prior_loss(&a, &d, 1.0, &stops).item() - expect).abs() < 1e-15);
}

#[test]
fn diffuse_weight_schedule() {
    let w = LossWeights::default();
    assert!((w.diffuse_weight(0) - 0.02).abs() < 1e-18);
    assert!((w.diffuse_weight(1000) - 0.002).abs() < 1e-15);
    assert_eq!(w.diffuse_weight(5000), w.diffuse_weight(1000));
    assert!(w.diffuse_weight(500) < 0.02 && w.diffuse_weight(500) > 0.002);
}

fn capture(seed: u64, size: usize) -> (ParamSet, OlatCapture) {
    let cam = camera(size);
    let truth = ParamSet::from_points(&random_points(6, seed + 100));
    let target = render_frame(&truth, &cam, &light(), None, ShadingMode::Full, &RenderOptions::default())
        .unwrap()
        .color_image();
    let params = ParamSet::from_points(&random_points(6, seed));
    (params, OlatCapture::new(target, cam, light()).unwrap())
}

#[test]
fn stage_losses_compose() {
    let (params, cap) = capture(1, 16);
    let w = LossWeights::default();
    let opts = RenderOptions::default();
    let stops = StopGrads::live();
    let tape = Tape::new();
    let p = tape.leaf(params.values.clone());
    let one = stage_loss(p, &cap, Stage::One, None, &w, 0, &opts, &stops).unwrap();
    let two = stage_loss(p, &cap, Stage::Two, None, &w, 0, &opts, &stops).unwrap();
    assert_eq!(one.terms.rgb, two.terms.rgb);
    assert_eq!(one.terms.sparse, two.terms.sparse);
    assert!(two.terms.normal > 0.0 && two.terms.smooth > 0.0);
    let sum = one.terms.total + two.terms.normal + two.terms.smooth;
    assert!((two.terms.total - sum).abs() < 1e-15);

    let three = stage_loss(p, &cap, Stage::Three, None, &w, 0, &opts, &stops).unwrap();
    let late = stage_loss(p, &cap, Stage::Three, None, &w, 2000, &opts, &stops).unwrap();
    assert!((three.terms.diffuse / late.terms.diffuse - 10.0).abs() < 1e-9);
    assert!(Stage::from_index(4).is_err());
}

#[test]
fn stage_one_perfect_fit_is_near_zero() {
    let cam = camera(12);
    let mut pts = random_points(5, 4);
    for p in &mut pts {
        p.opacity_logit = logit(1.0 - 1e-6) as f32;
    }
    let ps = ParamSet::from_points(&pts);
    let img = render_frame(&ps, &cam, &light(), None, ShadingMode::Ambient, &RenderOptions::default())
        .unwrap()
        .color_image();
    let cap = OlatCapture::new(img, cam, light()).unwrap();
    let tape = Tape::new();
    let l = stage_loss(
        tape.leaf(ps.values.clone()),
        &cap,
        Stage::One,
        None,
        &LossWeights::default(),
        0,
        &RenderOptions::default(),
        &StopGrads::live(),
    )
    .unwrap();
    assert!(l.terms.total < 1e-5, "{:?}", l.terms);
}

#[test]
fn shadowed_stage_three_gradient() {
    let (params, cap) = capture(2, 16);
    let bvh = crate::visibility::build_bvh_params(&params);
    let w = LossWeights::default();
    let opts = RenderOptions::default();
    let rec = StopGrads::record();
    {
        let tape = Tape::new();
        stage_loss(tape.leaf(params.values.clone()), &cap, Stage::Three, Some(&bvh), &w, 0, &opts, &rec).unwrap();
    }
    let replay = rec.into_replay();
    let loss = loss_fn(|_t, p| {
        replay.rewind();
        Ok(stage_loss(p, &cap, Stage::Three, Some(&bvh), &w, 0, &opts, &replay)?.total)
    });
    let r = finite_diff_check(&loss, &params.values, 1e-6, 60, 3).unwrap();
    assert!(r.checked >= 40, "{r:?}");
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn analytic_scale_minimizes_prior(seed in 0u64..u64::MAX, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
        let d: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
        let s = diffuse_scale_value(&a, &d);
        let best = diffuse_prior_value(&a, &d, s);
        for i in -2i32..=2 {
            for j in -2i32..=2 {
                for k in -2i32..=2 {
                    let p = [s[0] + 1e-3 * i as f64, s[1] + 1e-3 * j as f64, s[2] + 1e-3 * k as f64];
                    prop_assert!(best <= diffuse_prior_value(&a, &d, p));
                }
            }
        }
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..1000) {
        let (params, cap) = capture(seed, 10);
        let tape = Tape::new();
        let l = stage_loss(
            tape.leaf(params.values.clone()),
            &cap,
            Stage::Three,
            None,
            &LossWeights::default(),
            0,
            &RenderOptions::default(),
            &StopGrads::live(),
        ).unwrap();
        let t = l.terms;
        prop_assert!(t.rgb >= 0.0 && t.sparse >= 0.0 && t.normal >= 0.0 && t.smooth >= 0.0 && t.diffuse >= 0.0);
    }
}
