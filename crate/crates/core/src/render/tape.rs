//! Differentiable rendering on the tape.
//!
//! Discrete decisions (culling, depth order, which pixels a splat touches,
//! branch masks) are made from forward values and enter the tape as
//! constants. Everything continuous is recorded, so gradients reach every
//! attribute that influences a pixel.

use std::rc::Rc;

use super::project::{conic_of, radius_of, LOW_PASS, NEAR_PLANE};
use super::raster::{build_fragments, ScreenSplat, ALPHA_FLOOR, ALPHA_MAX};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::{lincomb, PointVars, V3};
use crate::scene::{Camera, PointLight};
use crate::shading::{shade_vars, ShadingMode, ShadingOptions};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderOptions {
    pub background: [f64; 3],
    pub shading: ShadingOptions,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            shading: ShadingOptions::default(),
        }
    }
}

/// Buffers of one differentiable render. Images are interleaved RGB.
pub struct TapeFrame<'t> {
    pub width: usize,
    pub height: usize,
    pub color: Var<'t>,
    pub ambient: Var<'t>,
    pub diffuse: Option<Var<'t>>,
    pub specular: Option<Var<'t>>,
    /// Alpha-weighted shading normals, not renormalized.
    pub normal: Option<Var<'t>>,
    pub alpha: Var<'t>,
    /// Expected depth, forward value only.
    pub depth: Vec<f64>,
    pub fragment_count: usize,
}

impl<'t> TapeFrame<'t> {
    /// Per-pixel value repeated across the three channels.
    pub fn expand(&self, per_pixel: Var<'t>) -> Var<'t> {
        per_pixel.gather(channel_expand(self.width * self.height))
    }

    /// `normal / max(alpha, 1e-8)`.
    pub fn normalized_normal(&self) -> Option<Var<'t>> {
        self.normal
            .map(|n| n / self.expand(self.alpha.max_const(ALPHA_FLOOR)))
    }
}

fn channel_expand(pixels: usize) -> Rc<[usize]> {
    (0..3 * pixels).map(|i| i / 3).collect::<Vec<_>>().into()
}

/// Renders the Gaussians in `params` from `camera` under `light`.
///
/// `visibility` holds one light-visibility factor per point (all points,
/// not only visible ones); `None` means fully lit.
pub fn render_tape<'t>(
    params: Var<'t>,
    camera: &Camera,
    light: &PointLight,
    visibility: Option<Var<'t>>,
    mode: ShadingMode,
    opts: &RenderOptions,
) -> Result<TapeFrame<'t>> {
    render_points(&PointVars::all(params), camera, light, visibility, mode, opts)
}

/// [`render_tape`] over attributes already gathered for every point.
pub fn render_points<'t>(
    all: &PointVars<'t>,
    camera: &Camera,
    light: &PointLight,
    visibility: Option<Var<'t>>,
    mode: ShadingMode,
    opts: &RenderOptions,
) -> Result<TapeFrame<'t>> {
    let tape = all.tape();
    let center = camera.center();
    let shaded = shade_vars(all, &center, light, visibility, &opts.shading, mode)?;
    let (w, h) = (camera.width, camera.height);
    let npix = w * h;

    let rot = camera.rotation();
    let tr = camera.translation();
    let tcam: V3<'t> = std::array::from_fn(|i| {
        lincomb(&[
            (all.position[0], rot[(i, 0)]),
            (all.position[1], rot[(i, 1)]),
            (all.position[2], rot[(i, 2)]),
        ])
        .map(|v| v + tr[i])
        .unwrap_or_else(|| tape.constant(vec![tr[i]; all.len()]))
    });
    let tz_all = tcam[2].value();
    let visible: Vec<usize> = (0..all.len()).filter(|&i| tz_all[i] > NEAR_PLANE).collect();
    let vidx: Rc<[usize]> = visible.clone().into();

    let [tx, ty, tz] = tcam.map(|v| v.gather(vidx.clone()));
    let cov_world = all.covariance().map(|v| v.gather(vidx.clone()));
    let sym = |k: usize, l: usize| -> usize {
        let (k, l) = if k <= l { (k, l) } else { (l, k) };
        [[0, 1, 2], [1, 3, 4], [2, 4, 5]][k][l]
    };
    // Camera-space covariance W Σ Wᵀ, entries (xx, xy, xz, yy, yz, zz).
    let cov_cam: Vec<Var<'t>> = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
        .iter()
        .map(|&(i, j)| {
            let mut coeff = [0.0; 6];
            for k in 0..3 {
                for l in 0..3 {
                    coeff[sym(k, l)] += rot[(i, k)] * rot[(j, l)];
                }
            }
            let terms: Vec<(Var<'t>, f64)> = (0..6).map(|s| (cov_world[s], coeff[s])).collect();
            lincomb(&terms).unwrap_or_else(|| tape.zeros(visible.len()))
        })
        .collect();
    let (fx, fy) = (camera.fx, camera.fy);
    let inv_z = 1.0 / tz;
    let j00 = inv_z * fx;
    let j11 = inv_z * fy;
    let j02 = tx * inv_z * inv_z * (-fx);
    let j12 = ty * inv_z * inv_z * (-fy);
    let [c00, c01, c02, c11, c12, c22] = [cov_cam[0], cov_cam[1], cov_cam[2], cov_cam[3], cov_cam[4], cov_cam[5]];
    let a = j00 * j00 * c00 + j00 * j02 * c02 * 2.0 + j02 * j02 * c22 + LOW_PASS;
    let b = j00 * j11 * c01 + j00 * j12 * c02 + j02 * j11 * c12 + j02 * j12 * c22;
    let c = j11 * j11 * c11 + j11 * j12 * c12 * 2.0 + j12 * j12 * c22 + LOW_PASS;
    let u = tx * inv_z * fx + camera.cx;
    let v = ty * inv_z * fy + camera.cy;

    let (av, bv, cv) = (a.value(), b.value(), c.value());
    let (uv, vv, tzv) = (u.value(), v.value(), tz.value());
    let op_vis = all.opacity.gather(vidx.clone());
    let ov = op_vis.value();
    let mut screen = Vec::with_capacity(visible.len());
    for (k, &i) in visible.iter().enumerate() {
        let conic = conic_of(av[k], bv[k], cv[k]).ok_or(Error::SingularCovariance { point: i })?;
        screen.push(ScreenSplat {
            mean: [uv[k], vv[k]],
            conic,
            radius: radius_of(av[k], bv[k], cv[k]),
            opacity: ov[k],
            depth: tzv[k],
            id: i,
        });
    }
    let det = a * c - b * b;
    let conic = [c / det, -b / det, a / det];

    let frags = build_fragments(&screen, w, h);
    let local: Rc<[usize]> = frags.splat.clone().into();
    let global: Rc<[usize]> = frags.splat.iter().map(|&k| visible[k]).collect::<Vec<_>>().into();
    let offsets: Rc<[usize]> = frags.offsets.clone().into();
    let px = tape.constant(frags.pixel.iter().map(|&p| (p % w) as f64 + 0.5).collect());
    let py = tape.constant(frags.pixel.iter().map(|&p| (p / w) as f64 + 0.5).collect());

    let dx = px - u.gather(local.clone());
    let dy = py - v.gather(local.clone());
    let m = conic[0].gather(local.clone()) * dx * dx
        + conic[1].gather(local.clone()) * dx * dy * 2.0
        + conic[2].gather(local.clone()) * dy * dy;
    let alpha_f = (op_vis.gather(local.clone()) * (m * -0.5).exp()).min_const(ALPHA_MAX);
    let trans = (1.0 - alpha_f).seg_cumprod_excl(offsets);
    let weight = trans * alpha_f;

    let pix: Rc<[usize]> = frags.pixel.clone().into();
    let chan: [Rc<[usize]>; 3] =
        std::array::from_fn(|c| frags.pixel.iter().map(|&p| 3 * p + c).collect::<Vec<_>>().into());
    let splat_image = |attr: &V3<'t>| -> Var<'t> {
        let parts: [Var<'t>; 3] = std::array::from_fn(|c| {
            (weight * attr[c].gather(global.clone())).scatter_add(chan[c].clone(), 3 * npix)
        });
        parts[0] + parts[1] + parts[2]
    };

    let ambient = splat_image(&shaded.ambient);
    let diffuse = shaded.diffuse.as_ref().map(|d| splat_image(d));
    let specular = shaded.specular.as_ref().map(|s| splat_image(s));
    let normal = shaded.normal.as_ref().map(|n| splat_image(n));
    let alpha = weight.scatter_add(pix, npix);

    let wv = weight.value();
    let mut depth_sum = vec![0.0; npix];
    for (k, &p) in frags.pixel.iter().enumerate() {
        depth_sum[p] += wv[k] * tzv[local[k]];
    }
    let av = alpha.value();
    let depth = depth_sum
        .iter()
        .zip(av.iter())
        .map(|(d, a)| d / a.max(ALPHA_FLOOR))
        .collect();

    let mut color = ambient;
    if let Some(d) = diffuse {
        color = color + d;
    }
    if let Some(s) = specular {
        color = color + s;
    }
    let frame = TapeFrame {
        width: w,
        height: h,
        color,
        ambient,
        diffuse,
        specular,
        normal,
        alpha,
        depth,
        fragment_count: frags.len(),
    };
    let bg: Vec<f64> = (0..3 * npix).map(|i| opts.background[i % 3]).collect();
    let color = if opts.background.iter().any(|&b| b != 0.0) {
        frame.color + (1.0 - frame.expand(frame.alpha)) * tape.constant(bg)
    } else {
        frame.color
    };
    Ok(TapeFrame { color, ..frame })
}
