mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;

use phong_splat::autodiff::{check_gradient, finite_diff_check, loss_fn, value_and_grad, ParamSet};
use phong_splat::checkpoint::{load_checkpoint, save_checkpoint};
use phong_splat::dataset::{load_dataset, save_dataset, MANIFEST_NAME};
use phong_splat::eval::{evaluate, Relighter};
use phong_splat::loss::{stage_loss, Stage, StopGrads};
use phong_splat::oracle::{
    generate_model_dataset, generate_olat_dataset, surface_gaussians, AnalyticScene, OlatConfig, OlatData, Split,
};
use phong_splat::render::{render_frame, RenderOptions};
use phong_splat::scene::{Camera, Dataset, GaussianPoint, PointLight};
use phong_splat::shading::ShadingMode;
use phong_splat::train::{
    initialize_stage3, phong_mask, random_cloud, run_stage3, shadow_mask, task_gradient, task_value, train_all,
    train_stage1, train_stage2, InnerSchedule, MetaDraw, MetaLosses, SceneLosses, TrainConfig, TrainReport,
};
use phong_splat::visibility::{build_bvh_params, transmittance_all};

use config::RunConfig;

const THREADS_ENV: &str = "PHONG_SPLAT_THREADS";
const SPLITS_FILE: &str = "splits.json";
const INIT_FILE: &str = "init.phgs";

/// Relightable Gaussian splatting for one-light-at-a-time captures.
///
/// Set PHONG_SPLAT_THREADS to cap worker threads (0 = one per core).
#[derive(Parser)]
#[command(name = "phong-splat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic OLAT dataset.
    Synth(SynthArgs),
    /// Train a scene on a dataset.
    Train(TrainArgs),
    /// Render a checkpoint from one camera.
    Render(RenderArgs),
    /// Render a checkpoint under one or more point lights.
    Relight(RelightArgs),
    /// Score a checkpoint on held-out captures.
    Eval(EvalArgs),
    /// Check analytic gradients on a random micro-scene.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    /// Sphere floating over a ground disc, ray traced.
    Sphere,
    /// Gaussians from `--checkpoint`, rendered by the engine itself.
    Model,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "sphere")]
    scene: SceneKind,
    /// Analytic scene as JSON, replacing the built-in sphere scene.
    #[arg(long)]
    scene_file: Option<PathBuf>,
    /// Checkpoint to render when `--scene model`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training captures.
    #[arg(long, default_value_t = 64)]
    n: usize,
    /// Held-out captures drawn like the training ones.
    #[arg(long, default_value_t = 8)]
    n_test: usize,
    /// Held-out captures with lights beyond `--ood-split`.
    #[arg(long, default_value_t = 0)]
    n_ood: usize,
    /// Plane normal `x,y,z`; training lights stay on its positive side.
    #[arg(long, value_parser = parse_vec3)]
    ood_split: Option<Vector3<f64>>,
    /// Keep cameras and lights on the positive side of this normal `x,y,z`.
    #[arg(long, value_parser = parse_vec3)]
    hemisphere: Option<Vector3<f64>>,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 3.0)]
    camera_radius: f64,
    #[arg(long, default_value_t = 2.0)]
    light_radius: f64,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 45.0)]
    fov: f64,
    /// Surface Gaussians written to `init.phgs` for analytic scenes.
    #[arg(long, default_value_t = 300)]
    init_points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory, or a `synth` output directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Starting checkpoint [default: `init.phgs` next to the data, else a random cloud].
    #[arg(long)]
    init: Option<PathBuf>,
    /// Random cloud size when there is no starting checkpoint [default: 1000].
    #[arg(long)]
    points: Option<usize>,
    /// Output directory [default: run].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stage iterations `s1,s2,s3` [default: 10000,5000,2000].
    #[arg(long, value_parser = parse_iters)]
    iters: Option<[usize; 3]>,
    /// Run only this stage (1, 2 or 3) [default: all].
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    stage: Option<u8>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Tasks per meta-iteration [default: 4].
    #[arg(long)]
    tasks_per_iteration: Option<usize>,
    /// Light clusters for meta-learning [default: 8].
    #[arg(long)]
    num_tasks: Option<usize>,
    /// Inner step size for Phong attributes [default: 1e-8].
    #[arg(long)]
    inner_lr_phong: Option<f64>,
    /// Inner step size for shadow coefficients [default: 1e-8].
    #[arg(long)]
    inner_lr_shadow: Option<f64>,
    /// Drop second-order meta-gradient terms [default: off].
    #[arg(long)]
    first_order: bool,
    /// Train with visibility fixed to 1 [default: off].
    #[arg(long)]
    no_shadows: bool,
    /// Enable densification and pruning [default: off].
    #[arg(long)]
    densify: bool,
    /// Specular exponent [default: 32].
    #[arg(long)]
    shininess: Option<f64>,
    /// Background color `r,g,b` [default: 0,0,0].
    #[arg(long, value_parser = parse_vec3)]
    background: Option<Vector3<f64>>,
    /// Images are sRGB-encoded [default: off, linear].
    #[arg(long)]
    srgb: bool,
    /// Progress line every N iterations, 0 for none [default: 50].
    #[arg(long)]
    log_interval: Option<usize>,
    /// Checkpoint every N iterations, 0 for stage ends only [default: 1000].
    #[arg(long)]
    checkpoint_interval: Option<usize>,
}

#[derive(Args)]
struct ViewArgs {
    /// Use the camera of this capture of `--data`.
    #[arg(long, requires = "data")]
    index: Option<usize>,
    /// Dataset providing cameras (and lights for `render`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Camera position `x,y,z` when no dataset camera is used.
    #[arg(long, value_parser = parse_vec3, default_value = "0,-3,1")]
    eye: Vector3<f64>,
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    target: Vector3<f64>,
    /// Image-up direction.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,1")]
    up: Vector3<f64>,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 45.0)]
    fov: f64,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long, default_value_t = 32.0)]
    shininess: f64,
    /// Background color `r,g,b`.
    #[arg(long, value_parser = parse_vec3, default_value = "0,0,0")]
    background: Vector3<f64>,
    /// Write sRGB-encoded PNGs.
    #[arg(long)]
    srgb: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    view: ViewArgs,
    /// Light position `x,y,z`; without it only ambient color is rendered.
    #[arg(long, value_parser = parse_vec3)]
    light: Option<Vector3<f64>>,
    /// Ignore shadows when a light is given.
    #[arg(long)]
    no_shadows: bool,
    /// Also write alpha, depth and normal buffers next to the image.
    #[arg(long)]
    buffers: bool,
    #[arg(long, default_value = "render.png")]
    out: PathBuf,
}

#[derive(Args)]
struct RelightArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    view: ViewArgs,
    /// Light position `x,y,z`; repeat for several images.
    #[arg(long, value_parser = parse_vec3)]
    light: Vec<Vector3<f64>>,
    /// Add N lights on a horizontal circle around the target.
    #[arg(long, default_value_t = 0)]
    orbit: usize,
    #[arg(long, default_value_t = 3.0)]
    orbit_radius: f64,
    /// Height of the orbit along `--up`.
    #[arg(long, default_value_t = 2.0)]
    orbit_height: f64,
    #[arg(long)]
    no_shadows: bool,
    #[arg(long, default_value = "relight")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test dataset, or a `synth` output directory.
    #[arg(long)]
    data: PathBuf,
    /// JSON list of split names, one per capture [default: `splits.json` beside the data].
    #[arg(long)]
    splits: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
    /// Directory for target|render PNG pairs.
    #[arg(long)]
    side_by_side: Option<PathBuf>,
    #[arg(long)]
    no_shadows: bool,
    #[arg(long, default_value_t = 32.0)]
    shininess: f64,
    #[arg(long)]
    srgb: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    points: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    /// Largest accepted relative error of the loss gradient.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Largest accepted relative error of the meta-gradient.
    #[arg(long, default_value_t = 1e-3)]
    meta_tolerance: f64,
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, z] if v.iter().all(|c| c.is_finite()) => Ok(Vector3::new(x, y, z)),
        _ => Err(format!("expected three finite numbers `x,y,z`, got `{s}`")),
    }
}

fn parse_iters(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into()
        .map_err(|_| format!("expected three iteration counts `s1,s2,s3`, got `{s}`"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render(a),
        Command::Relight(a) => relight(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
}

fn synth(a: SynthArgs) -> Result<ExitCode> {
    let cfg = OlatConfig {
        n_captures: a.n,
        n_test: a.n_test,
        n_ood: a.n_ood,
        camera_radius: a.camera_radius,
        light_radius: a.light_radius,
        width: a.size,
        height: a.size,
        fov_x_degrees: a.fov,
        ood_split: a.ood_split.map(Into::into),
        hemisphere: a.hemisphere.map(Into::into),
        seed: a.seed,
        ..Default::default()
    };
    let (data, init): (OlatData, Option<Vec<GaussianPoint>>) = match a.scene {
        SceneKind::Sphere => {
            let scene = match &a.scene_file {
                Some(p) => {
                    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => AnalyticScene::sphere_over_plane(),
            };
            let data = generate_olat_dataset(&scene, &cfg)?;
            let init = surface_gaussians(&scene, a.init_points, a.seed)?;
            std::fs::create_dir_all(&a.out)?;
            std::fs::write(a.out.join("scene.json"), serde_json::to_string_pretty(&scene)?)?;
            (data, Some(init))
        }
        SceneKind::Model => {
            let ckpt = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| anyhow!("--scene model needs --checkpoint"))?;
            let points = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            (generate_model_dataset(&points, &cfg, &RenderOptions::default())?, None)
        }
    };
    save_dataset(&data.train, &a.out.join("train"))?;
    if let Some(test) = &data.test {
        let dir = a.out.join("test");
        save_dataset(test, &dir)?;
        let names: Vec<&str> = data.test_splits.iter().map(|s| s.name()).collect();
        std::fs::write(dir.join(SPLITS_FILE), serde_json::to_string_pretty(&names)?)?;
    }
    if let Some(init) = init {
        save_checkpoint(&init, &a.out.join(INIT_FILE))?;
    }
    log::info!(
        "wrote {} training and {} test captures to {}",
        data.train.len(),
        data.test_splits.len(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Resolves a dataset directory: either it holds a manifest itself or it is
/// a `synth` output with the split in `sub`.
fn dataset_dir(path: &Path, sub: &str) -> PathBuf {
    if path.join(MANIFEST_NAME).exists() {
        path.to_path_buf()
    } else {
        path.join(sub)
    }
}

fn load_data(path: &Path, sub: &str, srgb: bool) -> Result<(PathBuf, Dataset)> {
    let dir = dataset_dir(path, sub);
    let data = load_dataset(&dir, srgb).with_context(|| format!("loading dataset {}", dir.display()))?;
    Ok((dir, data))
}

fn train(a: TrainArgs) -> Result<ExitCode> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_train_flags(&mut rc, &a);
    let cfg = &rc.train;
    cfg.validate().context("invalid training configuration")?;
    let data_path = rc.data.clone().ok_or_else(|| anyhow!("no dataset: pass --data or set `data`"))?;
    let (dir, dataset) = load_data(&data_path, "train", rc.srgb)?;

    let init_path = rc.init.clone().or_else(|| {
        [dir.join(INIT_FILE), data_path.join(INIT_FILE)]
            .into_iter()
            .find(|p| p.exists())
    });
    let start = match &init_path {
        Some(p) => load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let radius = 0.4
                * dataset.captures.iter().map(|c| c.camera.center().norm()).sum::<f64>()
                / dataset.len() as f64;
            random_cloud(rc.points.unwrap_or(1000), radius, cfg.seed)
        }
    };
    let out = rc.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    let cfg = TrainConfig {
        checkpoint_dir: Some(out.clone()),
        ..cfg.clone()
    };
    log::info!(
        "training {} Gaussians on {} captures from {}",
        start.len(),
        dataset.len(),
        dir.display()
    );
    let mut params = ParamSet::from_points(&start);
    let report = match a.stage {
        None => train_all(&mut params, &dataset, &cfg)?,
        Some(1) => TrainReport {
            stage1: train_stage1(&mut params, &dataset, &cfg)?,
            ..Default::default()
        },
        Some(2) => TrainReport {
            stage2: train_stage2(&mut params, &dataset, &cfg)?,
            ..Default::default()
        },
        Some(_) => {
            initialize_stage3(&mut params);
            let (tasks, meta) = run_stage3(&mut params, &dataset, &cfg)?;
            TrainReport {
                tasks,
                meta,
                ..Default::default()
            }
        }
    };
    save_checkpoint(&params.to_points(), &out.join("final.phgs"))?;
    std::fs::write(out.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
    log::info!("wrote {}", out.join("final.phgs").display());
    Ok(ExitCode::SUCCESS)
}

fn apply_train_flags(rc: &mut RunConfig, a: &TrainArgs) {
    let t = &mut rc.train;
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(t.iterations, a.iters);
    set!(t.seed, a.seed);
    set!(t.tasks_per_iteration, a.tasks_per_iteration);
    set!(t.num_tasks, a.num_tasks);
    set!(t.inner_lr_phong, a.inner_lr_phong);
    set!(t.inner_lr_shadow, a.inner_lr_shadow);
    set!(t.render.shading.shininess, a.shininess);
    set!(t.log_interval, a.log_interval);
    set!(t.checkpoint_interval, a.checkpoint_interval);
    if let Some(b) = a.background {
        t.render.background = b.into();
    }
    t.first_order |= a.first_order;
    t.shadows &= !a.no_shadows;
    t.densify.enabled |= a.densify;
    rc.srgb |= a.srgb;
    if a.data.is_some() {
        rc.data = a.data.clone();
    }
    if a.init.is_some() {
        rc.init = a.init.clone();
    }
    if a.out.is_some() {
        rc.out = a.out.clone();
    }
    if a.points.is_some() {
        rc.points = a.points;
    }
}

fn view_options(v: &ViewArgs) -> Result<RenderOptions> {
    let mut opts = RenderOptions {
        background: v.background.into(),
        ..Default::default()
    };
    opts.shading.shininess = v.shininess;
    if !(v.shininess > 0.0) {
        bail!("--shininess must be positive");
    }
    Ok(opts)
}

/// Camera from `--data/--index` or from the look-at flags, plus the dataset
/// light when one is used.
fn view_camera(v: &ViewArgs) -> Result<(Camera, Option<PointLight>)> {
    if let (Some(data), Some(i)) = (&v.data, v.index) {
        let (_, ds) = load_data(data, "test", v.srgb)?;
        let cap = ds
            .captures
            .get(i)
            .ok_or_else(|| anyhow!("capture {i} out of range (dataset has {})", ds.len()))?;
        return Ok((cap.camera.clone(), Some(cap.light)));
    }
    let cam = Camera::look_at(v.eye, v.target, v.up, v.fov.to_radians(), v.width, v.height)?;
    Ok((cam, None))
}

fn shadowed_frame(
    params: &ParamSet,
    camera: &Camera,
    light: &PointLight,
    shadows: bool,
    opts: &RenderOptions,
) -> Result<phong_splat::render::FrameBuffers> {
    let vis = if shadows {
        Some(transmittance_all(&build_bvh_params(params), params, light)?)
    } else {
        None
    };
    Ok(render_frame(params, camera, light, vis.as_deref(), ShadingMode::Full, opts)?)
}

fn render(a: RenderArgs) -> Result<ExitCode> {
    let points = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let params = ParamSet::from_points(&points);
    let opts = view_options(&a.view)?;
    let (camera, data_light) = view_camera(&a.view)?;
    let light = a.light.map(PointLight::white).or(data_light);
    let frame = match &light {
        Some(l) => shadowed_frame(&params, &camera, l, !a.no_shadows, &opts)?,
        None => {
            // The light only matters for shading normals' view direction here.
            let dummy = PointLight::white(camera.center() + Vector3::new(0.0, 0.0, 1.0));
            render_frame(&params, &camera, &dummy, None, ShadingMode::AmbientNormals, &opts)?
        }
    };
    frame.color_image().save_png8(&a.out, a.view.srgb)?;
    if a.buffers {
        let stem = a.out.with_extension("");
        let stem = stem.to_string_lossy();
        let (w, h) = (frame.width, frame.height);
        phong_splat::image::save_pfm(Path::new(&format!("{stem}_alpha.pfm")), w, h, &frame.alpha)?;
        phong_splat::image::save_pfm(Path::new(&format!("{stem}_depth.pfm")), w, h, &frame.depth)?;
        let normals: Vec<f64> = frame
            .normal
            .chunks_exact(3)
            .zip(&frame.alpha)
            .flat_map(|(n, a)| n.iter().map(move |v| v / a.max(1e-8)).collect::<Vec<_>>())
            .collect();
        phong_splat::image::normals_to_image(w, h, &normals).save_png8(Path::new(&format!("{stem}_normal.png")), false)?;
    }
    log::info!("wrote {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn relight(a: RelightArgs) -> Result<ExitCode> {
    let points = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let params = ParamSet::from_points(&points);
    let opts = view_options(&a.view)?;
    let (camera, _) = view_camera(&a.view)?;
    let mut lights = a.light.clone();
    let up = a.view.up.try_normalize(1e-12).ok_or_else(|| anyhow!("--up must be non-zero"))?;
    let helper = if up.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let (e1, e2) = {
        let e1 = up.cross(&helper).normalize();
        (e1, up.cross(&e1))
    };
    for k in 0..a.orbit {
        let t = std::f64::consts::TAU * k as f64 / a.orbit as f64;
        lights.push(a.view.target + (e1 * t.cos() + e2 * t.sin()) * a.orbit_radius + up * a.orbit_height);
    }
    if lights.is_empty() {
        bail!("give at least one --light or --orbit N");
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let bvh = (!a.no_shadows).then(|| build_bvh_params(&params));
    for (i, pos) in lights.iter().enumerate() {
        let light = PointLight::white(*pos);
        let vis = match &bvh {
            Some(b) => Some(transmittance_all(b, &params, &light)?),
            None => None,
        };
        let frame = render_frame(&params, &camera, &light, vis.as_deref(), ShadingMode::Full, &opts)?;
        let path = a.out.join(format!("relight_{i:04}.png"));
        frame.color_image().save_png8(&path, a.view.srgb)?;
    }
    log::info!("wrote {} images to {}", lights.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let points = load_checkpoint(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let (dir, data) = load_data(&a.data, "test", a.srgb)?;
    let split_path = a.splits.clone().unwrap_or_else(|| dir.join(SPLITS_FILE));
    let splits: Vec<Split> = if split_path.exists() {
        let text = std::fs::read_to_string(&split_path)?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", split_path.display()))?
    } else {
        vec![Split::NovelViewLight; data.len()]
    };
    let mut opts = RenderOptions::default();
    opts.shading.shininess = a.shininess;
    let relighter = Relighter::new(&points, opts, !a.no_shadows);
    let report = evaluate(&relighter, &data.captures, &splits, a.side_by_side.as_deref())?;
    report.save(&a.out)?;
    for (name, m) in &report.means {
        println!("{name}: PSNR {:.2} dB, SSIM {:.4}", m.psnr, m.ssim);
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let random_scene = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<GaussianPoint> {
        (0..a.points)
            .map(|_| {
                let mut q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                q[0] += 1.5;
                GaussianPoint {
                    position: std::array::from_fn(|_| rng.gen_range(-0.6..0.6)),
                    rotation: q,
                    log_scale: std::array::from_fn(|_| rng.gen_range(-2.2f32..-1.2)),
                    opacity_logit: rng.gen_range(-0.8..2.0),
                    ambient_color: std::array::from_fn(|_| rng.gen_range(0.0..0.5)),
                    normal_residual_out: std::array::from_fn(|_| rng.gen_range(-0.1..0.1)),
                    normal_residual_in: std::array::from_fn(|_| rng.gen_range(-0.1..0.1)),
                    diffuse_color: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                    specular_coeff: rng.gen_range(0.0..0.5),
                    shadow_coeff_logit: rng.gen_range(-1.0..2.0),
                }
            })
            .collect()
    };
    let params = ParamSet::from_points(&random_scene(&mut rng));
    let target = ParamSet::from_points(&random_scene(&mut rng));
    let cfg = OlatConfig {
        n_captures: 2,
        n_test: 0,
        width: a.size,
        height: a.size,
        seed: a.seed,
        ..Default::default()
    };
    let data = generate_model_dataset(&target.to_points(), &cfg, &RenderOptions::default())?.train;

    let train_cfg = TrainConfig::default();
    let mut losses = SceneLosses::new(&data, &train_cfg);
    losses.refresh(&params, 0);
    let bvh = build_bvh_params(&params);
    let cap = &data.captures[0];
    let w = train_cfg.weights;
    let opts = train_cfg.render;
    let rec = StopGrads::record();
    value_and_grad(
        &loss_fn(|_t, p| Ok(stage_loss(p, cap, Stage::Three, Some(&bvh), &w, 0, &opts, &rec)?.total)),
        &params.values,
    )?;
    let replay = rec.into_replay();
    let loss = loss_fn(|_t, p| {
        replay.rewind();
        Ok(stage_loss(p, cap, Stage::Three, Some(&bvh), &w, 0, &opts, &replay)?.total)
    });
    let r = finite_diff_check(&loss, &params.values, a.epsilon, a.samples, a.seed)?;
    println!(
        "stage-3 loss: max relative error {:.3e} over {} coordinates ({} skipped at kinks)",
        r.max_rel_error, r.checked, r.flagged
    );

    let n = params.num_points();
    let (mask_a, mask_b) = (phong_mask(n), shadow_mask(n));
    let inner = InnerSchedule {
        lr_phong: 1e-2,
        lr_shadow: 1e-1,
        phong_mask: &mask_a,
        shadow_mask: &mask_b,
        first_order: false,
    };
    let draw = MetaDraw {
        task: 0,
        support: 0,
        query: 1,
    };
    let rec = StopGrads::record();
    let (f0, g) = task_gradient(&losses, &params.values, draw, 0, &inner, &rec)?;
    let replay = rec.into_replay();
    let f = |x: &[f64]| {
        replay.rewind();
        task_value(&losses, x, draw, 0, &inner, &replay)
    };
    let m = check_gradient(f, f0, &g, &params.values, a.epsilon, a.samples, a.seed)?;
    println!(
        "meta-gradient: max relative error {:.3e} over {} coordinates ({} skipped at kinks)",
        m.max_rel_error, m.checked, m.flagged
    );
    if r.max_rel_error < a.tolerance && m.max_rel_error < a.meta_tolerance {
        println!("PASS");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("FAIL");
        Ok(ExitCode::FAILURE)
    }
}
