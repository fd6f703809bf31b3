//! Plain (non-differentiable) full-frame rendering.

use super::project::project_params;
use super::raster::{blend, FrameBuffers, ScreenSplat, SplatShading};
use super::tape::RenderOptions;
use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::scene::{Camera, PointLight};
use crate::shading::{shade_params, ShadingMode};

/// Renders `params` with per-point light `visibility` (`None` means 1).
pub fn render_frame(
    params: &ParamSet,
    camera: &Camera,
    light: &PointLight,
    visibility: Option<&[f64]>,
    mode: ShadingMode,
    opts: &RenderOptions,
) -> Result<FrameBuffers> {
    let n = params.num_points();
    if let Some(v) = visibility {
        if v.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} visibility values"),
                found: v.len().to_string(),
            });
        }
    }
    let center = camera.center();
    let mut screen = Vec::with_capacity(n);
    let mut shading = Vec::with_capacity(n);
    for i in 0..n {
        let p = params.point(i);
        let Some(splat) = project_params(p, i, camera) else {
            continue;
        };
        let sh = match mode {
            ShadingMode::Ambient => SplatShading::from([p[11], p[12], p[13]]),
            _ => {
                let vis = visibility.map_or(1.0, |v| v[i]);
                let (c, normal) = shade_params(p, &center, light, vis, &opts.shading)?;
                let full = mode == ShadingMode::Full;
                SplatShading {
                    ambient: c.ambient,
                    diffuse: if full { c.diffuse } else { [0.0; 3] },
                    specular: if full { c.specular } else { [0.0; 3] },
                    normal: normal.into(),
                }
            }
        };
        screen.push(ScreenSplat::from_splat(&splat)?);
        shading.push(sh);
    }
    Ok(blend(&screen, &shading, camera.width, camera.height, opts.background))
}
