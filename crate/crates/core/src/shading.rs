//! Blinn-Phong shading of individual Gaussians under a point light.
//!
//! Emitted light intensity is fixed at 1. The light color scales the
//! specular term; it scales the diffuse term only when
//! [`ShadingOptions::colored_diffuse`] is set.

use nalgebra::Vector3;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::{add3, div3, dot3, norm3, normalize3, PointVars, V3};
use crate::scene::{argmin3, quaternion_to_matrix, Camera, GaussianPoint, PointLight};

pub const DEFAULT_SHININESS: f64 = 32.0;
/// Minimum light-to-point distance.
pub const MIN_LIGHT_DISTANCE: f64 = 1e-6;
/// Below this `‖v + l‖` the half vector is undefined and specular is 0.
pub const HALF_VECTOR_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadingOptions {
    pub shininess: f64,
    pub colored_diffuse: bool,
}

impl Default for ShadingOptions {
    fn default() -> Self {
        Self {
            shininess: DEFAULT_SHININESS,
            colored_diffuse: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShadedColor {
    pub ambient: [f64; 3],
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
    pub total: [f64; 3],
}

/// Shading normal of the Gaussian whose attribute record is `p`.
///
/// The base direction is the rotation column of the smallest scale axis.
/// When it faces the viewer the outward residual is added, otherwise the
/// inward one and the result is flipped.
pub fn gaussian_normal_params(p: &[f64], view_dir: &Vector3<f64>) -> Result<Vector3<f64>> {
    let r = quaternion_to_matrix([p[3], p[4], p[5], p[6]]);
    let axis = argmin3([p[7], p[8], p[9]]);
    let v: Vector3<f64> = r.column(axis).into_owned();
    let raw = if view_dir.dot(&v) > 0.0 {
        v + Vector3::new(p[14], p[15], p[16])
    } else {
        -(v + Vector3::new(p[17], p[18], p[19]))
    };
    let norm = raw.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateNormal { point: None });
    }
    Ok(raw / norm)
}

pub fn gaussian_normal(point: &GaussianPoint, view_dir: &Vector3<f64>) -> Result<Vector3<f64>> {
    gaussian_normal_params(&point.to_array().map(f64::from), view_dir)
}

/// Direction to the light and squared distance.
fn light_vector(point_pos: &Vector3<f64>, light: &PointLight) -> Result<(Vector3<f64>, f64)> {
    let d = light.position - point_pos;
    let r = d.norm();
    if r < MIN_LIGHT_DISTANCE {
        return Err(Error::LightCoincident);
    }
    Ok((d / r, r * r))
}

/// Diffuse intensity from unit normal `n`, unit light direction `l` and
/// squared distance `r2`.
pub fn diffuse_term(n: &Vector3<f64>, l: &Vector3<f64>, r2: f64) -> f64 {
    n.dot(l).max(0.0) / r2
}

/// Specular intensity from unit normal, unit view and light directions.
pub fn specular_term(n: &Vector3<f64>, v: &Vector3<f64>, l: &Vector3<f64>, r2: f64, shininess: f64) -> f64 {
    let h = v + l;
    let hn = h.norm();
    if hn < HALF_VECTOR_EPS {
        return 0.0;
    }
    n.dot(&(h / hn)).max(0.0).powf(shininess) / r2
}

pub fn diffuse_intensity(n: &Vector3<f64>, point_pos: &Vector3<f64>, light: &PointLight) -> Result<f64> {
    let (l, r2) = light_vector(point_pos, light)?;
    Ok(diffuse_term(n, &l, r2))
}

pub fn specular_intensity(
    n: &Vector3<f64>,
    point_pos: &Vector3<f64>,
    camera_pos: &Vector3<f64>,
    light: &PointLight,
    shininess: f64,
) -> Result<f64> {
    let (l, r2) = light_vector(point_pos, light)?;
    let v = (camera_pos - point_pos)
        .try_normalize(0.0)
        .ok_or_else(|| Error::invalid("camera coincides with shaded point"))?;
    Ok(specular_term(n, &v, &l, r2, shininess))
}

/// Shades the Gaussian record `p` and also returns its shading normal.
pub fn shade_params(
    p: &[f64],
    camera_pos: &Vector3<f64>,
    light: &PointLight,
    visibility: f64,
    opts: &ShadingOptions,
) -> Result<(ShadedColor, Vector3<f64>)> {
    let pos = Vector3::new(p[0], p[1], p[2]);
    let view = (camera_pos - pos)
        .try_normalize(0.0)
        .ok_or_else(|| Error::invalid("camera coincides with shaded point"))?;
    let n = gaussian_normal_params(p, &view)?;
    let (l, r2) = light_vector(&pos, light)?;
    let id = diffuse_term(&n, &l, r2);
    let is = specular_term(&n, &view, &l, r2, opts.shininess);
    let mut c = ShadedColor::default();
    for k in 0..3 {
        let tint = if opts.colored_diffuse { light.color[k] } else { 1.0 };
        c.ambient[k] = p[11 + k];
        c.diffuse[k] = visibility * p[20 + k] * tint * id;
        c.specular[k] = visibility * p[23] * light.color[k] * is;
        c.total[k] = c.ambient[k] + c.diffuse[k] + c.specular[k];
    }
    Ok((c, n))
}

pub fn shade(
    point: &GaussianPoint,
    camera: &Camera,
    light: &PointLight,
    visibility: f64,
    shininess: f64,
) -> Result<ShadedColor> {
    let opts = ShadingOptions {
        shininess,
        ..Default::default()
    };
    Ok(shade_params(&point.to_array().map(f64::from), &camera.center(), light, visibility, &opts)?.0)
}

/// Which shading terms a tape render produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShadingMode {
    /// Ambient color only.
    Ambient,
    /// Ambient color plus shading normals.
    AmbientNormals,
    /// Ambient, diffuse and specular, with normals.
    Full,
}

/// Per-point shading outputs on the tape.
pub struct ShadedVars<'t> {
    pub ambient: V3<'t>,
    pub diffuse: Option<V3<'t>>,
    pub specular: Option<V3<'t>>,
    pub normal: Option<V3<'t>>,
}

/// Shading normals of every point in `pv` as seen from `camera_pos`.
pub fn normal_vars<'t>(pv: &PointVars<'t>, camera_pos: &Vector3<f64>) -> Result<(V3<'t>, V3<'t>)> {
    let tape = pv.tape();
    let to_cam: V3<'t> = std::array::from_fn(|k| camera_pos[k] - pv.position[k]);
    let view = normalize3(&to_cam);
    let axis = pv.axis_column(&pv.shortest_axes());
    let facing = dot3(&view, &axis).value();
    let m = tape.constant(facing.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect());
    let outward = add3(&axis, &pv.normal_out);
    let inward = add3(&axis, &pv.normal_in);
    let raw: V3<'t> = std::array::from_fn(|k| outward[k] * m - inward[k] * (1.0 - m));
    let len = norm3(&raw);
    if let Some(i) = len.value().iter().position(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::DegenerateNormal {
            point: Some(pv.ids[i]),
        });
    }
    Ok((div3(&raw, len), view))
}

/// Vectorized form of [`shade_params`] over the points of `pv`.
///
/// `visibility` multiplies diffuse and specular per point; `None` means 1.
pub fn shade_vars<'t>(
    pv: &PointVars<'t>,
    camera_pos: &Vector3<f64>,
    light: &PointLight,
    visibility: Option<Var<'t>>,
    opts: &ShadingOptions,
    mode: ShadingMode,
) -> Result<ShadedVars<'t>> {
    if mode == ShadingMode::Ambient {
        return Ok(ShadedVars {
            ambient: pv.ambient,
            diffuse: None,
            specular: None,
            normal: None,
        });
    }
    let (n, view) = normal_vars(pv, camera_pos)?;
    if mode == ShadingMode::AmbientNormals {
        return Ok(ShadedVars {
            ambient: pv.ambient,
            diffuse: None,
            specular: None,
            normal: Some(n),
        });
    }
    let tape = pv.tape();
    let to_light: V3<'t> = std::array::from_fn(|k| light.position[k] - pv.position[k]);
    let r2 = dot3(&to_light, &to_light);
    if r2.value().iter().any(|&d| d.sqrt() < MIN_LIGHT_DISTANCE) {
        return Err(Error::LightCoincident);
    }
    let l = div3(&to_light, r2.sqrt());
    let id = dot3(&n, &l).relu() / r2;

    let h = add3(&view, &l);
    let hn = norm3(&h);
    let defined = tape.constant(
        hn.value()
            .iter()
            .map(|&v| if v < HALF_VECTOR_EPS { 0.0 } else { 1.0 })
            .collect(),
    );
    let ndh = dot3(&n, &h) / hn.max_const(HALF_VECTOR_EPS);
    let is = ndh.relu().powf(opts.shininess) * defined / r2;

    let (id, is) = match visibility {
        Some(v) => (id * v, is * v),
        None => (id, is),
    };
    let diffuse = std::array::from_fn(|k| {
        let d = pv.diffuse[k] * id;
        if opts.colored_diffuse {
            d * light.color[k]
        } else {
            d
        }
    });
    let ks_is = pv.specular * is;
    let specular = std::array::from_fn(|k| ks_is * light.color[k]);
    Ok(ShadedVars {
        ambient: pv.ambient,
        diffuse: Some(diffuse),
        specular: Some(specular),
        normal: Some(n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flat_point() -> GaussianPoint {
        GaussianPoint {
            log_scale: [1.0, 0.5, 0.0],
            ..Default::default()
        }
    }

    #[test]
    fn normal_follows_view_side() {
        let p = flat_point();
        let n = gaussian_normal(&p, &Vector3::z()).unwrap();
        assert_eq!(n, Vector3::z());
        let n = gaussian_normal(&p, &-Vector3::z()).unwrap();
        assert_eq!(n, -Vector3::z());
        let mut q = p;
        q.normal_residual_out = [0.1, 0.0, 0.0];
        let n = gaussian_normal(&q, &Vector3::z()).unwrap();
        let expect = Vector3::new(0.1f32 as f64, 0.0, 1.0).normalize();
        assert!((n - expect).norm() < 1e-15);
    }

    #[test]
    fn degenerate_residual_is_reported() {
        let mut p = flat_point();
        p.normal_residual_out = [0.0, 0.0, -1.0];
        assert!(matches!(
            gaussian_normal(&p, &Vector3::z()),
            Err(Error::DegenerateNormal { .. })
        ));
    }

    #[test]
    fn diffuse_examples() {
        let l = PointLight::white(Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(diffuse_intensity(&Vector3::z(), &Vector3::zeros(), &l).unwrap(), 1.0);
        assert_eq!(diffuse_intensity(&-Vector3::z(), &Vector3::zeros(), &l).unwrap(), 0.0);
        let l = PointLight::white(Vector3::new(0.0, 3.0, 4.0));
        let d = diffuse_intensity(&Vector3::z(), &Vector3::zeros(), &l).unwrap();
        assert!((d - 0.032).abs() < 1e-15);
        let at = PointLight::white(Vector3::zeros());
        assert!(matches!(
            diffuse_intensity(&Vector3::z(), &Vector3::zeros(), &at),
            Err(Error::LightCoincident)
        ));
    }

    #[test]
    fn specular_examples() {
        let l = PointLight::white(Vector3::z());
        for p in [1.0, 7.0, 32.0] {
            let s = specular_intensity(&Vector3::z(), &Vector3::zeros(), &Vector3::new(0.0, 0.0, 5.0), &l, p).unwrap();
            assert!((s - 1.0).abs() < 1e-15);
        }
        // n·h = 0.5 with h = z: n at 60° from z.
        let n = Vector3::new((0.75f64).sqrt(), 0.0, 0.5);
        let s = specular_intensity(&n, &Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.0), &l, 2.0).unwrap();
        assert!((s - 0.25).abs() < 1e-15);
        let s = specular_intensity(&-Vector3::z(), &Vector3::zeros(), &Vector3::new(0.0, 0.0, 2.0), &l, 2.0).unwrap();
        assert_eq!(s, 0.0);
        // Camera exactly opposite the light.
        let s = specular_intensity(&Vector3::z(), &Vector3::zeros(), &-Vector3::z(), &l, 2.0).unwrap();
        assert_eq!(s, 0.0);
    }

    fn cam() -> Camera {
        Camera::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), Vector3::y(), 0.8, 8, 8).unwrap()
    }

    #[test]
    fn shade_examples() {
        let mut p = flat_point();
        p.ambient_color = [0.2, 0.1, 0.3];
        p.diffuse_color = [0.5, 0.5, 0.5];
        p.specular_coeff = 0.7;
        let light = PointLight::white(Vector3::new(0.3, 0.2, 2.0));
        let c = shade(&p, &cam(), &light, 0.0, 32.0).unwrap();
        assert_eq!(c.total, [0.2f32 as f64, 0.1f32 as f64, 0.3f32 as f64]);

        let behind = PointLight::white(Vector3::new(0.0, 0.0, -2.0));
        let c = shade(&p, &cam(), &behind, 1.0, 32.0).unwrap();
        assert_eq!(c.total, c.ambient);

        // visibility 0.5, k_d = (0.4, 0.2, 0), I_d = 0.5, no ambient or specular.
        let q = GaussianPoint {
            log_scale: [1.0, 0.5, 0.0],
            diffuse_color: [0.4, 0.2, 0.0],
            ..Default::default()
        };
        let l = PointLight::white(Vector3::new(0.0, 0.0, 2f64.sqrt()));
        let c = shade(&q, &cam(), &l, 0.5, 32.0).unwrap();
        let expect = [0.4f32 as f64 * 0.25, 0.2f32 as f64 * 0.25, 0.0];
        for k in 0..3 {
            assert!((c.total[k] - expect[k]).abs() < 1e-15, "{:?}", c.total);
        }
    }

    #[test]
    fn tape_shading_matches_plain() {
        use crate::autodiff::{ParamSet, Tape};
        let pts: Vec<GaussianPoint> = (0..6)
            .map(|i| {
                let f = i as f32;
                GaussianPoint {
                    position: [0.3 * f - 0.7, 0.1 * f, -0.2 * f],
                    rotation: [1.0, 0.1 * f, -0.2, 0.05 * f],
                    log_scale: [-1.0 + 0.1 * f, -2.0, -1.5 + 0.2 * f],
                    ambient_color: [0.1, 0.2, 0.3],
                    normal_residual_out: [0.05, -0.02 * f, 0.01],
                    normal_residual_in: [-0.03, 0.02, 0.04 * f],
                    diffuse_color: [0.5, 0.3 * f / 5.0, 0.2],
                    specular_coeff: 0.3,
                    ..Default::default()
                }
            })
            .collect();
        let ps = ParamSet::from_points(&pts);
        let cam_pos = Vector3::new(0.5, -2.0, 3.0);
        let light = PointLight::new(Vector3::new(1.0, 2.0, 2.5), Vector3::new(1.0, 0.8, 0.6)).unwrap();
        let opts = ShadingOptions {
            shininess: 16.0,
            colored_diffuse: true,
        };
        let tape = Tape::new();
        let theta = tape.leaf(ps.values.clone());
        let pv = PointVars::all(theta);
        let vis: Vec<f64> = (0..6).map(|i| 0.2 + 0.1 * i as f64).collect();
        let sv = shade_vars(&pv, &cam_pos, &light, Some(tape.constant(vis.clone())), &opts, ShadingMode::Full).unwrap();
        for i in 0..6 {
            let (c, n) = shade_params(&ps.values[i * 25..(i + 1) * 25], &cam_pos, &light, vis[i], &opts).unwrap();
            for k in 0..3 {
                assert!((sv.diffuse.unwrap()[k].value()[i] - c.diffuse[k]).abs() < 1e-12);
                assert!((sv.specular.unwrap()[k].value()[i] - c.specular[k]).abs() < 1e-12);
                assert!((sv.normal.unwrap()[k].value()[i] - n[k]).abs() < 1e-12);
                assert_eq!(sv.ambient[k].value()[i], c.ambient[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn normal_is_unit_and_shading_non_negative(
            q in prop::array::uniform4(-1.0f64..1.0),
            ls in prop::array::uniform3(-3.0f64..1.0),
            res in prop::array::uniform6(-0.3f64..0.3),
            col in prop::array::uniform5(0.0f64..1.0),
            vis in 0.0f64..1.0,
            light in prop::array::uniform3(-3.0f64..3.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-2);
            prop_assume!(Vector3::from(light).norm() > 0.1);
            let mut p = [0.0; 25];
            p[3..7].copy_from_slice(&q);
            p[7..10].copy_from_slice(&ls);
            p[14..20].copy_from_slice(&res);
            p[11] = col[0]; p[12] = col[1]; p[13] = col[2];
            p[20] = col[3]; p[21] = col[4]; p[22] = col[0]; p[23] = col[1];
            let cam_pos = Vector3::new(0.0, 0.0, 3.0);
            let view = cam_pos.normalize();
            let n = gaussian_normal_params(&p, &view).unwrap();
            prop_assert!((n.norm() - 1.0).abs() <= 1e-12);
            let l = PointLight::white(Vector3::from(light));
            let opts = ShadingOptions::default();
            let (c, _) = shade_params(&p, &cam_pos, &l, vis, &opts).unwrap();
            let (full, _) = shade_params(&p, &cam_pos, &l, 1.0, &opts).unwrap();
            for k in 0..3 {
                prop_assert!(c.ambient[k] >= 0.0 && c.diffuse[k] >= 0.0 && c.specular[k] >= 0.0);
                prop_assert_eq!(c.total[k], c.ambient[k] + c.diffuse[k] + c.specular[k]);
                prop_assert!(full.total[k] >= c.total[k]);
            }
        }

        #[test]
        fn intensities_scale_inverse_square(t in 0.2f64..5.0, dir in prop::array::uniform3(-1.0f64..1.0)) {
            let d = Vector3::from(dir);
            prop_assume!(d.norm() > 0.1);
            let d = d.normalize();
            let n = Vector3::new(0.3, 0.4, 0.866).normalize();
            let cam_pos = Vector3::new(0.0, 1.0, 2.0);
            let near = PointLight::white(d);
            let far = PointLight::white(d * t);
            let id1 = diffuse_intensity(&n, &Vector3::zeros(), &near).unwrap();
            let id2 = diffuse_intensity(&n, &Vector3::zeros(), &far).unwrap();
            prop_assert!((id2 * t * t - id1).abs() <= 1e-12 * id1.abs().max(1.0));
            let is1 = specular_intensity(&n, &Vector3::zeros(), &cam_pos, &near, 8.0).unwrap();
            let is2 = specular_intensity(&n, &Vector3::zeros(), &cam_pos, &far, 8.0).unwrap();
            prop_assert!((is2 * t * t - is1).abs() <= 1e-12 * is1.abs().max(1.0));
        }
    }
}
