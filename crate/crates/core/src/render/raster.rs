use crate::error::{Error, Result};
use crate::scene::Camera;

use super::project::Splat2D;

pub const ALPHA_MAX: f64 = 0.999;
/// Fragments fainter than this are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Squared Mahalanobis radius (3σ) beyond which a splat contributes nothing.
pub const CUTOFF: f64 = 9.0;
/// Floor on accumulated alpha when normalizing depth and normals.
pub const ALPHA_FLOOR: f64 = 1e-8;

/// Screen-space splat ready for blending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenSplat {
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub radius: f64,
    pub opacity: f64,
    pub depth: f64,
    pub id: usize,
}

impl ScreenSplat {
    pub fn from_splat(s: &Splat2D) -> Result<Self> {
        Ok(Self {
            mean: s.mean,
            conic: s.conic()?,
            radius: s.radius(),
            opacity: s.opacity,
            depth: s.depth,
            id: s.id,
        })
    }
}

/// Squared Mahalanobis distance of offset `(dx, dy)` under `conic`.
#[inline]
pub fn mahalanobis(conic: &[f64; 3], dx: f64, dy: f64) -> f64 {
    conic[0] * dx * dx + conic[1] * dx * dy * 2.0 + conic[2] * dy * dy
}

#[inline]
pub fn fragment_alpha(opacity: f64, m: f64) -> f64 {
    (opacity * (-0.5 * m).exp()).min(ALPHA_MAX)
}

/// Fragments grouped by pixel, front to back within each pixel.
///
/// Fragment `k` of pixel `p` lies in `offsets[p]..offsets[p + 1]`;
/// `splat[k]` indexes the input splat list.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fragments {
    pub offsets: Vec<usize>,
    pub splat: Vec<usize>,
    pub pixel: Vec<usize>,
}

impl Fragments {
    pub fn len(&self) -> usize {
        self.splat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splat.is_empty()
    }
}

/// Splat indices ordered by depth, ties by point id.
pub fn depth_order(splats: &[ScreenSplat]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].id.cmp(&splats[b].id))
    });
    order
}

/// Finds every (pixel, splat) pair inside the 3σ ellipse with alpha at
/// least [`ALPHA_MIN`]. Pixel `(x, y)` is sampled at `(x + 0.5, y + 0.5)`.
pub fn build_fragments(splats: &[ScreenSplat], width: usize, height: usize) -> Fragments {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in depth_order(splats) {
        let s = &splats[i];
        let [u, v] = s.mean;
        let r = s.radius;
        if !(u + r >= 0.0 && v + r >= 0.0 && u - r <= width as f64 && v - r <= height as f64) {
            continue;
        }
        let x0 = (u - r).floor().max(0.0) as usize;
        let y0 = (v - r).floor().max(0.0) as usize;
        let x1 = ((u + r).ceil() as usize).min(width - 1);
        let y1 = ((v + r).ceil() as usize).min(height - 1);
        for y in y0..=y1 {
            let dy = y as f64 + 0.5 - v;
            for x in x0..=x1 {
                let dx = x as f64 + 0.5 - u;
                let m = mahalanobis(&s.conic, dx, dy);
                if m > CUTOFF {
                    continue;
                }
                if fragment_alpha(s.opacity, m) < ALPHA_MIN {
                    continue;
                }
                pairs.push((y * width + x, i));
            }
        }
    }
    // Stable counting sort by pixel keeps depth order inside each pixel.
    let npix = width * height;
    let mut offsets = vec![0usize; npix + 1];
    for &(p, _) in &pairs {
        offsets[p + 1] += 1;
    }
    for p in 0..npix {
        offsets[p + 1] += offsets[p];
    }
    let mut cursor = offsets.clone();
    let mut splat = vec![0; pairs.len()];
    let mut pixel = vec![0; pairs.len()];
    for &(p, i) in &pairs {
        let k = cursor[p];
        splat[k] = i;
        pixel[k] = p;
        cursor[p] += 1;
    }
    Fragments {
        offsets,
        splat,
        pixel,
    }
}

/// Per-splat colors and shading normal fed to the blender.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatShading {
    pub ambient: [f64; 3],
    pub diffuse: [f64; 3],
    pub specular: [f64; 3],
    pub normal: [f64; 3],
}

impl From<[f64; 3]> for SplatShading {
    fn from(c: [f64; 3]) -> Self {
        Self {
            ambient: c,
            ..Default::default()
        }
    }
}

/// Outputs of one render. Color images are interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffers {
    pub width: usize,
    pub height: usize,
    pub color: Vec<f64>,
    pub ambient: Vec<f64>,
    pub diffuse: Vec<f64>,
    pub specular: Vec<f64>,
    /// Alpha-weighted camera depth normalized by `max(alpha, 1e-8)`.
    pub depth: Vec<f64>,
    /// Alpha-weighted sum of shading normals (not renormalized).
    pub normal: Vec<f64>,
    /// Accumulated alpha `Σ Tᵢ αᵢ`.
    pub alpha: Vec<f64>,
    /// Transmittance left after the last fragment.
    pub transmittance: Vec<f64>,
}

impl FrameBuffers {
    pub fn new(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![0.0; 3 * n],
            ambient: vec![0.0; 3 * n],
            diffuse: vec![0.0; 3 * n],
            specular: vec![0.0; 3 * n],
            depth: vec![0.0; n],
            normal: vec![0.0; 3 * n],
            alpha: vec![0.0; n],
            transmittance: vec![1.0; n],
        }
    }

    pub fn color_image(&self) -> crate::image::Image {
        crate::image::Image {
            width: self.width,
            height: self.height,
            data: self.color.clone(),
        }
    }
}

/// Front-to-back alpha blending of already screen-space splats.
pub fn blend(
    splats: &[ScreenSplat],
    shading: &[SplatShading],
    width: usize,
    height: usize,
    background: [f64; 3],
) -> FrameBuffers {
    assert_eq!(splats.len(), shading.len(), "one shading entry per splat");
    let frags = build_fragments(splats, width, height);
    let mut fb = FrameBuffers::new(width, height);
    for p in 0..width * height {
        let (x, y) = ((p % width) as f64 + 0.5, (p / width) as f64 + 0.5);
        let mut t = 1.0;
        let mut acc = 0.0;
        let mut depth = 0.0;
        for k in frags.offsets[p]..frags.offsets[p + 1] {
            let i = frags.splat[k];
            let s = &splats[i];
            let m = mahalanobis(&s.conic, x - s.mean[0], y - s.mean[1]);
            let a = fragment_alpha(s.opacity, m);
            let w = t * a;
            let sh = &shading[i];
            for c in 0..3 {
                fb.ambient[3 * p + c] += w * sh.ambient[c];
                fb.diffuse[3 * p + c] += w * sh.diffuse[c];
                fb.specular[3 * p + c] += w * sh.specular[c];
                fb.normal[3 * p + c] += w * sh.normal[c];
            }
            depth += w * s.depth;
            acc += w;
            t *= 1.0 - a;
        }
        fb.alpha[p] = acc;
        fb.transmittance[p] = t;
        fb.depth[p] = depth / acc.max(ALPHA_FLOOR);
        for c in 0..3 {
            fb.color[3 * p + c] = fb.ambient[3 * p + c]
                + fb.diffuse[3 * p + c]
                + fb.specular[3 * p + c]
                + (1.0 - acc) * background[c];
        }
    }
    fb
}

/// Alpha-blends `splats` with one shading entry each.
pub fn rasterize(
    splats: &[Splat2D],
    shading: &[SplatShading],
    camera: &Camera,
    background: [f64; 3],
) -> Result<FrameBuffers> {
    if splats.len() != shading.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} shading entries", splats.len()),
            found: format!("{}", shading.len()),
        });
    }
    let screen = splats
        .iter()
        .map(ScreenSplat::from_splat)
        .collect::<Result<Vec<_>>>()?;
    Ok(blend(&screen, shading, camera.width, camera.height, background))
}
