//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! `PHONG_SPLAT_ACCEPTANCE=1,6` restricts the run to the listed criteria.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phong_splat::autodiff::{check_gradient, finite_diff_check, loss_fn, value_and_grad, ParamSet};
use phong_splat::checkpoint::encode_checkpoint;
use phong_splat::eval::{evaluate, psnr, ssim, EvalReport, Relighter, PSNR_SENTINEL};
use phong_splat::image::Image;
use phong_splat::loss::{diffuse_scale_value, diffuse_prior_value, stage_loss, LossWeights, Stage, StopGrads};
use phong_splat::oracle::{generate_model_dataset, generate_olat_dataset, surface_gaussians, AnalyticScene, OlatConfig, Split};
use phong_splat::render::{render_frame, RenderOptions};
use phong_splat::scene::{logit, Camera, Dataset, GaussianPoint, OlatCapture, PointLight};
use phong_splat::shading::ShadingMode;
use phong_splat::train::{
    phong_mask, shadow_mask, task_gradient, task_value, train_all, InnerSchedule, MetaDraw, MetaLosses, SceneLosses, TrainConfig,
    TrainReport,
};
use phong_splat::visibility::{brute_force_transmittance, build_bvh_params, transmittance_all};

struct Outcome {
    pass: bool,
    detail: String,
}

/// Stage-3 query-loss curves of every training run, by scene label.
static QUERY_CURVES: Mutex<Vec<(String, Vec<f64>)>> = Mutex::new(Vec::new());

fn record_curve(label: &str, report: &TrainReport) {
    QUERY_CURVES.lock().unwrap().push((label.to_string(), report.meta.query_loss.clone()));
}

/// The held-out query loss, averaged over the last 100 meta-iterations, must
/// end below its first value on every scene trained above.
fn query_loss_drops() -> Option<Outcome> {
    let curves = QUERY_CURVES.lock().unwrap();
    if curves.is_empty() {
        return None;
    }
    let mut pass = true;
    let parts: Vec<String> = curves
        .iter()
        .map(|(label, c)| {
            let tail = &c[c.len().saturating_sub(100)..];
            let end = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
            let ok = !c.is_empty() && end < c[0];
            pass &= ok;
            format!("{label} {:.4} -> {end:.4}", c.first().copied().unwrap_or(f64::NAN))
        })
        .collect();
    Some(outcome(pass, parts.join(", ")))
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<GaussianPoint> {
    (0..n)
        .map(|_| {
            let mut q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            q[0] += 1.5;
            GaussianPoint {
                position: std::array::from_fn(|_| rng.gen_range(-0.6..0.6)),
                rotation: q,
                log_scale: std::array::from_fn(|_| rng.gen_range(-2.2f32..-1.2)),
                opacity_logit: logit(rng.gen_range(0.3..0.9)) as f32,
                ambient_color: std::array::from_fn(|_| rng.gen_range(0.0..0.5)),
                normal_residual_out: std::array::from_fn(|_| rng.gen_range(-0.1..0.1)),
                normal_residual_in: std::array::from_fn(|_| rng.gen_range(-0.1..0.1)),
                diffuse_color: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                specular_coeff: rng.gen_range(0.0..0.5),
                shadow_coeff_logit: rng.gen_range(-1.0..2.0),
            }
        })
        .collect()
}

fn random_camera(size: usize, rng: &mut ChaCha8Rng) -> Camera {
    let eye = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -3.0);
    Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0), 50f64.to_radians(), size, size).unwrap()
}

fn random_light(rng: &mut ChaCha8Rng) -> PointLight {
    PointLight::white(Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..-0.8), rng.gen_range(-2.5..-1.5)))
}

fn shadowed_render(points: &[GaussianPoint], camera: &Camera, light: &PointLight) -> Image {
    let params = ParamSet::from_points(points);
    let vis = transmittance_all(&build_bvh_params(&params), &params, light).unwrap();
    render_frame(&params, camera, light, Some(&vis), ShadingMode::Full, &RenderOptions::default())
        .unwrap()
        .color_image()
}

/// Five random Gaussians on 16×16 captures whose targets come from another
/// random scene, so every loss term is active.
fn micro_scene() -> (ParamSet, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let points = random_points(5, &mut rng);
    let other = random_points(5, &mut rng);
    let captures = (0..3)
        .map(|_| {
            let camera = random_camera(16, &mut rng);
            let light = random_light(&mut rng);
            let image = shadowed_render(&other, &camera, &light);
            OlatCapture::new(image, camera, light).unwrap()
        })
        .collect();
    (ParamSet::from_points(&points), Dataset::new("micro", captures).unwrap())
}

fn criterion_1() -> Outcome {
    let (params, data) = micro_scene();
    let bvh = build_bvh_params(&params);
    let cap = &data.captures[0];
    let w = LossWeights::default();
    let opts = RenderOptions::default();
    let rec = StopGrads::record();
    let (_, _) = value_and_grad(
        &loss_fn(|_t, p| Ok(stage_loss(p, cap, Stage::Three, Some(&bvh), &w, 0, &opts, &rec)?.total)),
        &params.values,
    )
    .unwrap();
    let replay = rec.into_replay();
    let loss = loss_fn(|_t, p| {
        replay.rewind();
        Ok(stage_loss(p, cap, Stage::Three, Some(&bvh), &w, 0, &opts, &replay)?.total)
    });
    let r = finite_diff_check(&loss, &params.values, 1e-6, 100, 7).unwrap();
    outcome(
        r.checked == 100 && r.max_rel_error < 1e-4,
        format!(
            "max rel err {:.2e} over {} coords ({} kink samples skipped)",
            r.max_rel_error, r.checked, r.flagged
        ),
    )
}

fn criterion_2() -> Outcome {
    let (params, data) = micro_scene();
    let cfg = TrainConfig::default();
    let mut losses = SceneLosses::new(&data, &cfg);
    losses.refresh(&params, 0);
    let n = params.num_points();
    let (mask_a, mask_b) = (phong_mask(n), shadow_mask(n));
    let draw = MetaDraw {
        task: 0,
        support: 0,
        query: 1,
    };
    let mut details = Vec::new();
    let mut pass = true;
    // Default inner rates, then rates large enough for second-order terms
    // to change the gradient noticeably.
    for (a1, a2) in [(cfg.inner_lr_phong, cfg.inner_lr_shadow), (1e-2, 1e-1)] {
        let inner = InnerSchedule {
            lr_phong: a1,
            lr_shadow: a2,
            phong_mask: &mask_a,
            shadow_mask: &mask_b,
            first_order: false,
        };
        let rec = StopGrads::record();
        let (f0, g) = task_gradient(&losses, &params.values, draw, 0, &inner, &rec).unwrap();
        let replay = rec.into_replay();
        let f = |x: &[f64]| {
            replay.rewind();
            task_value(&losses, x, draw, 0, &inner, &replay)
        };
        let r = check_gradient(f, f0, &g, &params.values, 1e-6, 100, 11).unwrap();
        pass &= r.checked == 100 && r.max_rel_error < 1e-3;
        details.push(format!("lr ({a1:e}, {a2:e}): max rel err {:.2e}", r.max_rel_error));
    }
    let zero = InnerSchedule {
        lr_phong: 0.0,
        lr_shadow: 0.0,
        phong_mask: &mask_a,
        shadow_mask: &mask_b,
        first_order: false,
    };
    let (_, g0) = task_gradient(&losses, &params.values, draw, 0, &zero, &StopGrads::live()).unwrap();
    let plain = value_and_grad(
        &loss_fn(|_t, p| losses.shadow(p, draw.query, 0, &StopGrads::live())),
        &params.values,
    )
    .unwrap()
    .1;
    let bitwise = g0.iter().zip(&plain).all(|(a, b)| a.to_bits() == b.to_bits());
    pass &= bitwise;
    details.push(format!("lr 0 bitwise equal: {bitwise}"));
    outcome(pass, details.join("; "))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_t, mut worst_c) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.gen_range(1..60);
        let points = random_points(n, &mut rng);
        let params = ParamSet::from_points(&points);
        let camera = random_camera(rng.gen_range(8..33), &mut rng);
        let light = random_light(&mut rng);
        let vis: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f = render_frame(&params, &camera, &light, Some(&vis), ShadingMode::Full, &RenderOptions::default()).unwrap();
        for (a, t) in f.alpha.iter().zip(&f.transmittance) {
            worst_t = worst_t.max((a + t - 1.0).abs());
        }
        for i in 0..f.color.len() {
            worst_c = worst_c.max((f.color[i] - (f.ambient[i] + f.diffuse[i] + f.specular[i])).abs());
        }
    }
    outcome(
        worst_t <= 1e-12 && worst_c <= 1e-9,
        format!("max |ΣTα + T - 1| = {worst_t:.1e}, max composite gap = {worst_c:.1e}"),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut unshadowed_ok = true;
    for _ in 0..200 {
        let n = rng.gen_range(1..=200);
        let mut points = random_points(n, &mut rng);
        let light = random_light(&mut rng);
        let params = ParamSet::from_points(&points);
        let bvh = build_bvh_params(&params);
        let fast = transmittance_all(&bvh, &params, &light).unwrap();
        for (i, t) in fast.iter().enumerate() {
            let slow = brute_force_transmittance(&params, i, &light).unwrap();
            worst = worst.max((t - slow).abs());
        }
        for p in &mut points {
            p.shadow_coeff_logit = -1000.0;
        }
        let params = ParamSet::from_points(&points);
        let t = transmittance_all(&build_bvh_params(&params), &params, &light).unwrap();
        unshadowed_ok &= t.iter().all(|&v| v == 1.0);
    }
    outcome(
        worst <= 1e-12 && unshadowed_ok,
        format!("max |BVH - brute force| = {worst:.1e}; zero shadow coefficients give T = 1: {unshadowed_ok}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut margin = f64::INFINITY;
    for _ in 0..100 {
        let n = rng.gen_range(1..20);
        let ambient: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.0..1.0))).collect();
        let diffuse: Vec<[f64; 3]> = (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(0.01..1.0))).collect();
        let s = diffuse_scale_value(&ambient, &diffuse);
        let best = diffuse_prior_value(&ambient, &diffuse, s);
        for dx in -3i32..=3 {
            for dy in -3i32..=3 {
                for dz in -3i32..=3 {
                    if (dx, dy, dz) == (0, 0, 0) {
                        continue;
                    }
                    let t = [
                        s[0] + 1e-3 * dx as f64,
                        s[1] + 1e-3 * dy as f64,
                        s[2] + 1e-3 * dz as f64,
                    ];
                    margin = margin.min(diffuse_prior_value(&ambient, &diffuse, t) - best);
                }
            }
        }
    }
    outcome(margin > 0.0, format!("smallest loss increase over the grid {margin:.2e}"))
}

/// Sixteen Gaussians: a 3×4 plate of flat disks with four blobs above it.
fn known_scene() -> Vec<GaussianPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut points = Vec::new();
    for i in 0..4 {
        for j in 0..3 {
            let tint: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.3..0.9));
            points.push(GaussianPoint {
                position: [-0.6 + 0.4 * i as f32, -0.4 + 0.4 * j as f32, 0.0],
                log_scale: [(0.22f32).ln(), (0.22f32).ln(), (0.02f32).ln()],
                opacity_logit: logit(0.95) as f32,
                ambient_color: tint.map(|c| 0.15 * c),
                diffuse_color: tint,
                specular_coeff: 0.1,
                shadow_coeff_logit: 3.0,
                ..Default::default()
            });
        }
    }
    for k in 0..4 {
        let a = std::f32::consts::FRAC_PI_2 * k as f32 + 0.4;
        let tint: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.2..0.8));
        points.push(GaussianPoint {
            position: [0.35 * a.cos(), 0.35 * a.sin(), 0.35],
            rotation: [0.9, 0.3 * a.cos(), 0.3 * a.sin(), 0.1],
            log_scale: [(0.14f32).ln(), (0.1f32).ln(), (0.07f32).ln()],
            opacity_logit: logit(0.9) as f32,
            ambient_color: tint.map(|c| 0.2 * c),
            diffuse_color: tint,
            specular_coeff: 0.3,
            shadow_coeff_logit: 3.0,
            ..Default::default()
        });
    }
    points
}

/// Truth with jittered geometry and all appearance reset.
fn perturbed_start(truth: &[GaussianPoint], seed: u64) -> Vec<GaussianPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    truth
        .iter()
        .map(|p| GaussianPoint {
            position: p.position.map(|v| v + rng.gen_range(-0.03f32..0.03)),
            log_scale: p.log_scale.map(|v| v + rng.gen_range(-0.1f32..0.1)),
            opacity_logit: 0.0,
            ambient_color: [0.1; 3],
            diffuse_color: [0.0; 3],
            specular_coeff: 0.0,
            shadow_coeff_logit: 0.0,
            ..*p
        })
        .collect()
}

struct RecoveryRun {
    checkpoint: Vec<u8>,
    renders: Vec<Vec<f64>>,
    report: EvalReport,
    seconds: f64,
}

fn recovery_run() -> RecoveryRun {
    let start = Instant::now();
    let truth = known_scene();
    let data_cfg = OlatConfig {
        n_captures: 64,
        n_test: 8,
        light_radius: 2.5,
        seed: 6,
        ..Default::default()
    };
    let data = generate_model_dataset(&truth, &data_cfg, &RenderOptions::default()).unwrap();
    let cfg = TrainConfig {
        iterations: [2000, 1000, 500],
        seed: 6,
        log_interval: 0,
        checkpoint_interval: 0,
        ..Default::default()
    };
    let mut params = ParamSet::from_points(&perturbed_start(&truth, 7));
    let train_report = train_all(&mut params, &data.train, &cfg).unwrap();
    record_curve("known", &train_report);
    let points = params.to_points();
    let test = data.test.unwrap();
    let relighter = Relighter::new(&points, cfg.render, true);
    let renders = test.captures.iter().map(|c| relighter.render(c).unwrap().data).collect();
    let report = evaluate(&relighter, &test.captures, &data.test_splits, None).unwrap();
    RecoveryRun {
        checkpoint: encode_checkpoint(&points),
        renders,
        report,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn criterion_6(first: &mut Option<RecoveryRun>) -> Outcome {
    let run = first.get_or_insert_with(recovery_run);
    let held = run.report.mean(Split::NovelViewLight).unwrap();
    let min = run.report.per_image.iter().map(|s| s.psnr).fold(f64::INFINITY, f64::min);
    outcome(
        held.psnr >= 35.0 && run.seconds < 600.0,
        format!(
            "held-out mean PSNR {:.2} dB (worst {:.2}), SSIM {:.4}, {:.0} s",
            held.psnr, min, held.ssim, run.seconds
        ),
    )
}

fn criterion_9(first: &mut Option<RecoveryRun>) -> Outcome {
    let a = first.get_or_insert_with(recovery_run);
    let b = recovery_run();
    let same_ckpt = a.checkpoint == b.checkpoint;
    let same_px = a.renders == b.renders;
    outcome(
        same_ckpt && same_px,
        format!("identical checkpoints: {same_ckpt}; identical renders: {same_px}"),
    )
}

fn sphere_scene_config() -> TrainConfig {
    TrainConfig {
        iterations: [2000, 1000, 500],
        log_interval: 0,
        checkpoint_interval: 0,
        ..Default::default()
    }
}

fn train_analytic(label: &str, train: &Dataset, cfg: &TrainConfig) -> Vec<GaussianPoint> {
    let init = surface_gaussians(&AnalyticScene::sphere_over_plane(), 300, 1).unwrap();
    let mut params = ParamSet::from_points(&init);
    let report = train_all(&mut params, train, cfg).unwrap();
    record_curve(label, &report);
    params.to_points()
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let data_cfg = OlatConfig {
        n_captures: 48,
        n_test: 8,
        hemisphere: Some([0.0, 0.0, 1.0]),
        seed: 7,
        ..Default::default()
    };
    let data = generate_olat_dataset(&AnalyticScene::sphere_over_plane(), &data_cfg).unwrap();
    let test = data.test.as_ref().unwrap();
    let mut scores = Vec::new();
    for shadows in [true, false] {
        let cfg = TrainConfig {
            shadows,
            ..sphere_scene_config()
        };
        let label = if shadows { "sphere" } else { "sphere-flat" };
        let points = train_analytic(label, &data.train, &cfg);
        let relighter = Relighter::new(&points, cfg.render, shadows);
        let report = evaluate(&relighter, &test.captures, &data.test_splits, None).unwrap();
        scores.push(report.mean(Split::NovelViewLight).unwrap().psnr);
    }
    let secs = start.elapsed().as_secs_f64();
    let (full, flat) = (scores[0], scores[1]);
    outcome(
        full - flat >= 1.0 && full >= 25.0 && secs < 1200.0,
        format!("with shadows {full:.2} dB, without {flat:.2} dB, gap {:.2} dB, {secs:.0} s", full - flat),
    )
}

fn criterion_8() -> Outcome {
    let data_cfg = OlatConfig {
        n_captures: 48,
        n_test: 8,
        n_ood: 8,
        hemisphere: Some([0.0, 0.0, 1.0]),
        ood_split: Some([1.0, 0.0, 0.0]),
        seed: 8,
        ..Default::default()
    };
    let data = generate_olat_dataset(&AnalyticScene::sphere_over_plane(), &data_cfg).unwrap();
    let test = data.test.as_ref().unwrap();
    let cfg = sphere_scene_config();
    let points = train_analytic("sphere-ood", &data.train, &cfg);
    let relighter = Relighter::new(&points, cfg.render, true);
    let report = match evaluate(&relighter, &test.captures, &data.test_splits, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("evaluation failed: {e}")),
    };
    let (Some(ind), Some(ood)) = (report.mean(Split::NovelViewLight), report.mean(Split::OodLight)) else {
        return outcome(false, "report lacks a split");
    };
    let all_rendered = report.per_image.len() == test.len();
    outcome(
        all_rendered && ood.psnr >= ind.psnr - 3.0,
        format!("in-distribution {:.2} dB, OOD {:.2} dB over {} images", ind.psnr, ood.psnr, report.per_image.len()),
    )
}

fn criterion_10() -> Outcome {
    let g = |v: f64| Image::filled(32, 32, [v; 3]);
    let mut x = Image::new(32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    x.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..1.0));
    let p20 = psnr(&g(0.5), &g(0.6)).unwrap();
    let p26 = psnr(&g(0.5), &g(0.55)).unwrap();
    let same = psnr(&x, &x).unwrap();
    let sxx = ssim(&x, &x).unwrap();
    let sc = ssim(&g(0.5), &g(0.6)).unwrap();
    let pass = (p20 - 20.0).abs() < 1e-9
        && (p26 - 26.0206).abs() < 1e-4
        && same == PSNR_SENTINEL
        && (sxx - 1.0).abs() < 1e-12
        && (sc - 0.9837).abs() < 1e-3;
    outcome(
        pass,
        format!("PSNR {p20:.6} / {p26:.4} / {same}; SSIM(x,x) {sxx:.12}; constant SSIM {sc:.4}"),
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("PHONG_SPLAT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|v| v.contains(&n));
    let mut recovery: Option<RecoveryRun> = None;
    let mut failures = 0;
    for n in 1..=10 {
        if !wanted(n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(&mut recovery),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(&mut recovery),
            _ => criterion_10(),
        }));
        let o = result.unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failures += usize::from(!o.pass);
        println!(
            "criterion {n:>2}: {} | {} | {:.1} s",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if let Some(o) = query_loss_drops() {
        failures += usize::from(!o.pass);
        println!("invariant: {} | stage-3 query loss {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
