//! Analytic ground truth: ray-traced spheres and discs with exact Phong
//! shading and hard shadows, plus OLAT dataset generators.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::render::{render_frame, RenderOptions};
use crate::scene::{logit, matrix_to_quaternion, Camera, Dataset, GaussianPoint, OlatCapture, PointLight};
use crate::shading::{diffuse_term, specular_term, ShadingMode};
use crate::visibility::{build_bvh_params, transmittance_all};

/// Offset of shadow-ray origins along the surface normal.
pub const SHADOW_BIAS: f64 = 1e-6;
/// Subsamples per pixel axis; the box filter below assumes 2.
pub const SUPERSAMPLE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub ambient: [f64; 3],
    pub diffuse: [f64; 3],
    pub specular: f64,
    pub shininess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Two-sided disc of radius `extent` around `point`.
    Plane { point: [f64; 3], normal: [f64; 3], extent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
}

/// Closest ray intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub t: f64,
    pub primitive: usize,
    pub point: Vector3<f64>,
    /// Geometric normal, for discs facing the ray origin.
    pub normal: Vector3<f64>,
}

impl Shape {
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<(f64, Vector3<f64>)> {
        match *self {
            Shape::Sphere { center, radius } => {
                let c = Vector3::from(center);
                let oc = origin - c;
                let b = oc.dot(dir);
                let disc = b * b - (oc.norm_squared() - radius * radius);
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t = [-b - s, -b + s].into_iter().find(|&t| t > t_min)?;
                let p = origin + dir * t;
                Some((t, (p - c) / radius))
            }
            Shape::Plane { point, normal, extent } => {
                let n = Vector3::from(normal);
                let denom = n.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let c = Vector3::from(point);
                let t = (c - origin).dot(&n) / denom;
                if t <= t_min || (origin + dir * t - c).norm() > extent {
                    return None;
                }
                Some((t, if denom < 0.0 { n } else { -n }))
            }
        }
    }

    fn area(&self) -> f64 {
        match *self {
            Shape::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Shape::Plane { extent, .. } => PI * extent * extent,
        }
    }
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.primitives.iter().enumerate() {
            match p.shape {
                Shape::Sphere { radius, .. } if !(radius > 0.0 && radius.is_finite()) => {
                    return Err(Error::invalid(format!("primitive {i}: sphere radius must be positive")));
                }
                Shape::Plane { normal, extent, .. } => {
                    let n = Vector3::from(normal).norm();
                    if (n - 1.0).abs() > 1e-9 {
                        return Err(Error::invalid(format!("primitive {i}: plane normal must be unit length")));
                    }
                    if !(extent > 0.0) {
                        return Err(Error::invalid(format!("primitive {i}: plane extent must be positive")));
                    }
                }
                _ => {}
            }
            if !(p.material.shininess > 0.0) {
                return Err(Error::invalid(format!("primitive {i}: shininess must be positive")));
            }
        }
        Ok(())
    }

    /// A sphere floating above a ground disc at `z = 0`.
    pub fn sphere_over_plane() -> Self {
        Self {
            primitives: vec![
                Primitive {
                    shape: Shape::Sphere {
                        center: [0.0, 0.0, 0.6],
                        radius: 0.5,
                    },
                    material: Material {
                        ambient: [0.08, 0.04, 0.03],
                        diffuse: [0.9, 0.45, 0.3],
                        specular: 0.3,
                        shininess: 32.0,
                    },
                },
                Primitive {
                    shape: Shape::Plane {
                        point: [0.0, 0.0, 0.0],
                        normal: [0.0, 0.0, 1.0],
                        extent: 1.2,
                    },
                    material: Material {
                        ambient: [0.05, 0.05, 0.06],
                        diffuse: [0.74, 0.8, 0.86],
                        specular: 0.0,
                        shininess: 32.0,
                    },
                },
            ],
        }
    }

    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<SurfaceHit> {
        let mut best: Option<SurfaceHit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal)) = p.shape.intersect(origin, dir, t_min) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(SurfaceHit {
                        t,
                        primitive: i,
                        point: origin + dir * t,
                        normal,
                    });
                }
            }
        }
        best
    }

    /// Whether the segment from `point` to the light is blocked.
    pub fn occluded(&self, point: &Vector3<f64>, normal: &Vector3<f64>, light: &PointLight) -> bool {
        let origin = point + normal * SHADOW_BIAS;
        let to_light = light.position - origin;
        let dist = to_light.norm();
        let dir = to_light / dist;
        self.primitives
            .iter()
            .any(|p| p.shape.intersect(&origin, &dir, 0.0).is_some_and(|(t, _)| t < dist))
    }

    /// Radiance along one camera ray.
    pub fn shade_ray(&self, eye: &Vector3<f64>, dir: &Vector3<f64>, light: &PointLight) -> [f64; 3] {
        let Some(hit) = self.intersect(eye, dir, 0.0) else {
            return [0.0; 3];
        };
        let m = &self.primitives[hit.primitive].material;
        let mut out = m.ambient;
        if self.occluded(&hit.point, &hit.normal, light) {
            return out;
        }
        let to_light = light.position - hit.point;
        let r2 = to_light.norm_squared();
        let l = to_light / r2.sqrt();
        let v = -dir;
        let d = diffuse_term(&hit.normal, &l, r2);
        let s = specular_term(&hit.normal, &v, &l, r2, m.shininess);
        for k in 0..3 {
            out[k] += m.diffuse[k] * d + m.specular * light.color[k] * s;
        }
        out
    }
}

/// Ray-traced image with 2×2 supersampling and a black background.
pub fn render_ground_truth(scene: &AnalyticScene, camera: &Camera, light: &PointLight) -> Image {
    let (w, h) = (camera.width, camera.height);
    let eye = camera.center();
    let data: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let eye = &eye;
            (0..w).flat_map(move |x| {
                let sample = |sx: usize, sy: usize| {
                    let u = x as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let v = y as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    scene.shade_ray(eye, &camera.ray_direction(u, v), light)
                };
                let s = [sample(0, 0), sample(1, 0), sample(0, 1), sample(1, 1)];
                // Pairwise so that four equal samples average exactly.
                std::array::from_fn::<f64, 3, _>(|k| ((s[0][k] + s[1][k]) + (s[2][k] + s[3][k])) * 0.25)
            })
        })
        .collect();
    Image { width: w, height: h, data }
}

/// Which held-out condition a test capture probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    NovelView,
    NovelLight,
    /// New camera and new light, both drawn from the training distribution.
    NovelViewLight,
    OodLight,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::NovelView => "novel-view",
            Split::NovelLight => "novel-light",
            Split::NovelViewLight => "novel-view-light",
            Split::OodLight => "ood-light",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OlatConfig {
    /// Training captures.
    pub n_captures: usize,
    /// Held-out captures drawn like the training ones.
    pub n_test: usize,
    /// Held-out captures with lights on the far side of `ood_split`.
    pub n_ood: usize,
    pub camera_radius: f64,
    pub light_radius: f64,
    pub width: usize,
    pub height: usize,
    pub fov_x_degrees: f64,
    /// Image-up direction in world space.
    pub up: [f64; 3],
    /// Plane normal through the origin; training lights lie on its positive
    /// side, OOD lights on the rest.
    pub ood_split: Option<[f64; 3]>,
    /// Keep cameras and lights on the positive side of this plane normal.
    pub hemisphere: Option<[f64; 3]>,
    pub seed: u64,
}

impl Default for OlatConfig {
    fn default() -> Self {
        Self {
            n_captures: 64,
            n_test: 8,
            n_ood: 0,
            camera_radius: 3.0,
            light_radius: 2.0,
            width: 64,
            height: 64,
            fov_x_degrees: 45.0,
            up: [0.0, 0.0, 1.0],
            ood_split: None,
            hemisphere: None,
            seed: 0,
        }
    }
}

impl OlatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_captures < 2 {
            return Err(Error::invalid("at least two training captures are required"));
        }
        if !(self.camera_radius > 0.0 && self.light_radius > 0.0) {
            return Err(Error::invalid("camera and light radii must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be at least 1x1"));
        }
        if !(self.fov_x_degrees > 0.0 && self.fov_x_degrees < 180.0) {
            return Err(Error::invalid("field of view must lie in (0, 180) degrees"));
        }
        for (name, n) in [("ood_split", self.ood_split), ("hemisphere", self.hemisphere)] {
            if let Some(n) = n {
                if Vector3::from(n).try_normalize(1e-12).is_none() {
                    return Err(Error::invalid(format!("{name} normal is degenerate")));
                }
            }
        }
        if self.n_ood > 0 && self.ood_split.is_none() {
            return Err(Error::invalid("n_ood > 0 requires ood_split"));
        }
        Ok(())
    }
}

/// Camera and light of one capture, before rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSetup {
    pub camera: Camera,
    pub light: PointLight,
    pub split: Split,
}

/// Train and test captures with a split label per test capture.
#[derive(Debug, Clone, PartialEq)]
pub struct OlatData {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub test_splits: Vec<Split>,
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Reflects `d` so that `sign(d·n)` is positive (`want_positive`) or
/// non-positive.
fn fold(d: Vector3<f64>, n: &Vector3<f64>, want_positive: bool) -> Vector3<f64> {
    let s = d.dot(n);
    if (s > 0.0) == want_positive {
        d
    } else {
        d - n * (2.0 * s)
    }
}

/// Samples cameras and lights for every capture. Training and in-range test
/// lights are folded onto the positive side of `ood_split`, OOD lights onto
/// the other side, so both sets are uniform on their hemispheres.
pub fn sample_setups(cfg: &OlatConfig) -> Result<Vec<CaptureSetup>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = cfg.ood_split.map(|n| Vector3::from(n).normalize());
    let hemi = cfg.hemisphere.map(|n| Vector3::from(n).normalize());
    let up = Vector3::from(cfg.up);
    let fov = cfg.fov_x_degrees.to_radians();
    let kinds = std::iter::repeat_n(Split::Train, cfg.n_captures)
        .chain(std::iter::repeat_n(Split::NovelViewLight, cfg.n_test))
        .chain(std::iter::repeat_n(Split::OodLight, cfg.n_ood));
    let mut out = Vec::with_capacity(cfg.n_captures + cfg.n_test + cfg.n_ood);
    for kind in kinds {
        let mut cam_dir = unit_sphere(&mut rng);
        let mut light_dir = unit_sphere(&mut rng);
        if let Some(h) = &hemi {
            cam_dir = fold(cam_dir, h, true);
            light_dir = fold(light_dir, h, true);
        }
        if let Some(n) = &split {
            light_dir = fold(light_dir, n, kind != Split::OodLight);
        }
        let camera = Camera::look_at(cam_dir * cfg.camera_radius, Vector3::zeros(), up, fov, cfg.width, cfg.height)?;
        let light = PointLight::white(light_dir * cfg.light_radius);
        out.push(CaptureSetup {
            camera,
            light,
            split: kind,
        });
    }
    Ok(out)
}

fn assemble(name: &str, setups: Vec<CaptureSetup>, images: Vec<Image>) -> Result<OlatData> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut test_splits = Vec::new();
    for (s, image) in setups.into_iter().zip(images) {
        let cap = OlatCapture::new(image, s.camera, s.light)?;
        if s.split == Split::Train {
            train.push(cap);
        } else {
            test.push(cap);
            test_splits.push(s.split);
        }
    }
    Ok(OlatData {
        train: Dataset::new(format!("{name}-train"), train)?,
        test: if test.is_empty() {
            None
        } else {
            Some(Dataset::new(format!("{name}-test"), test)?)
        },
        test_splits,
    })
}

/// Ray-traces OLAT captures of `scene`.
pub fn generate_olat_dataset(scene: &AnalyticScene, cfg: &OlatConfig) -> Result<OlatData> {
    scene.validate()?;
    let setups = sample_setups(cfg)?;
    let images = setups
        .iter()
        .map(|s| render_ground_truth(scene, &s.camera, &s.light))
        .collect();
    assemble("analytic", setups, images)
}

/// Renders OLAT captures of a Gaussian scene with the engine's own shadowed
/// forward model, for self-consistency experiments.
pub fn generate_model_dataset(points: &[GaussianPoint], cfg: &OlatConfig, opts: &RenderOptions) -> Result<OlatData> {
    let setups = sample_setups(cfg)?;
    let images = render_model_captures(points, &setups, opts)?;
    assemble("model", setups, images)
}

/// Renders every setup with full shadowed shading.
pub fn render_model_captures(points: &[GaussianPoint], setups: &[CaptureSetup], opts: &RenderOptions) -> Result<Vec<Image>> {
    let params = ParamSet::from_points(points);
    let bvh = build_bvh_params(&params);
    setups
        .iter()
        .map(|s| {
            let vis = transmittance_all(&bvh, &params, &s.light)?;
            let frame = render_frame(&params, &s.camera, &s.light, Some(&vis), ShadingMode::Full, opts)?;
            Ok(frame.color_image())
        })
        .collect()
}

/// Flat Gaussians spread over the surfaces of `scene`, roughly one per
/// `area / count`, carrying the surface material.
pub fn surface_gaussians(scene: &AnalyticScene, count: usize, seed: u64) -> Result<Vec<GaussianPoint>> {
    scene.validate()?;
    if scene.primitives.is_empty() || count == 0 {
        return Ok(Vec::new());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let areas: Vec<f64> = scene.primitives.iter().map(|p| p.shape.area()).collect();
    let total: f64 = areas.iter().sum();
    let tangent_sigma = 0.5 * (total / count as f64).sqrt();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut pick = rng.gen_range(0.0..total);
        let mut idx = 0;
        while idx + 1 < areas.len() && pick >= areas[idx] {
            pick -= areas[idx];
            idx += 1;
        }
        let prim = &scene.primitives[idx];
        let (pos, normal) = match prim.shape {
            Shape::Sphere { center, radius } => {
                let d = unit_sphere(&mut rng);
                (Vector3::from(center) + d * radius, d)
            }
            Shape::Plane { point, normal, extent } => {
                let n = Vector3::from(normal);
                let (a, b) = tangent_frame(&n);
                let r = extent * rng.gen_range(0.0f64..1.0).sqrt();
                let phi = rng.gen_range(0.0..2.0 * PI);
                (Vector3::from(point) + (a * phi.cos() + b * phi.sin()) * r, n)
            }
        };
        let (a, b) = tangent_frame(&normal);
        let rot = Matrix3::from_columns(&[a, b, normal]);
        let q = matrix_to_quaternion(&rot);
        let m = &prim.material;
        let s = tangent_sigma.ln() as f32;
        out.push(GaussianPoint {
            position: [pos.x as f32, pos.y as f32, pos.z as f32],
            rotation: q.map(|v| v as f32),
            log_scale: [s, s, (0.1 * tangent_sigma).ln() as f32],
            opacity_logit: logit(0.9) as f32,
            ambient_color: m.ambient.map(|v| v as f32),
            diffuse_color: m.diffuse.map(|v| v as f32),
            specular_coeff: m.specular as f32,
            shadow_coeff_logit: logit(0.9) as f32,
            ..Default::default()
        });
    }
    Ok(out)
}

fn tangent_frame(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a);
    (a, b)
}
