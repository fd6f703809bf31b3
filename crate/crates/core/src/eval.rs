//! Image metrics and held-out evaluation reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::oracle::Split;
use crate::render::{render_frame, RenderOptions};
use crate::scene::{GaussianPoint, OlatCapture};
use crate::shading::ShadingMode;
use crate::visibility::{build_bvh_params, transmittance_all, Bvh};

/// PSNR reported for identical images.
pub const PSNR_SENTINEL: f64 = 99.0;

/// Peak signal-to-noise ratio for a dynamic range of 1.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL);
    }
    Ok(-10.0 * mse.log10())
}

/// Mean SSIM, shared with the training loss.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    crate::loss::ssim(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub index: usize,
    pub split: Split,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitMean {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageScore>,
    pub means: BTreeMap<String, SplitMean>,
    pub wallclock_s: f64,
}

impl EvalReport {
    pub fn mean(&self, split: Split) -> Option<SplitMean> {
        self.means.get(split.name()).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Model renderer with the BVH built once.
pub struct Relighter {
    params: ParamSet,
    bvh: Option<Bvh>,
    opts: RenderOptions,
}

impl Relighter {
    /// With `shadows` off every point is fully lit.
    pub fn new(points: &[GaussianPoint], opts: RenderOptions, shadows: bool) -> Self {
        let params = ParamSet::from_points(points);
        let bvh = shadows.then(|| build_bvh_params(&params));
        Self { params, bvh, opts }
    }

    pub fn render(&self, capture: &OlatCapture) -> Result<Image> {
        let vis = match &self.bvh {
            Some(bvh) => Some(transmittance_all(bvh, &self.params, &capture.light)?),
            None => None,
        };
        let frame = render_frame(
            &self.params,
            &capture.camera,
            &capture.light,
            vis.as_deref(),
            ShadingMode::Full,
            &self.opts,
        )?;
        Ok(frame.color_image())
    }
}

/// Renders each capture, scores it against its image and averages per split.
/// With `side_by_side` set, writes `NNNN.png` (target | render) there.
pub fn evaluate(
    relighter: &Relighter,
    captures: &[OlatCapture],
    splits: &[Split],
    side_by_side: Option<&Path>,
) -> Result<EvalReport> {
    if captures.len() != splits.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} split labels", captures.len()),
            found: format!("{}", splits.len()),
        });
    }
    if let Some(dir) = side_by_side {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let start = Instant::now();
    let mut report = EvalReport::default();
    let mut sums: BTreeMap<Split, (f64, f64, usize)> = BTreeMap::new();
    for (index, (cap, &split)) in captures.iter().zip(splits).enumerate() {
        let img = relighter.render(cap)?;
        let p = psnr(&img, &cap.image)?;
        let s = ssim(&img, &cap.image)?;
        if let Some(dir) = side_by_side {
            Image::hstack(&[&cap.image, &img])?.save_png8(&dir.join(format!("{index:04}.png")), true)?;
        }
        let e = sums.entry(split).or_default();
        e.0 += p;
        e.1 += s;
        e.2 += 1;
        report.per_image.push(ImageScore {
            index,
            split,
            psnr: p,
            ssim: s,
        });
    }
    report.means = sums
        .into_iter()
        .map(|(k, (p, s, n))| {
            (
                k.name().to_string(),
                SplitMean {
                    psnr: p / n as f64,
                    ssim: s / n as f64,
                },
            )
        })
        .collect();
    report.wallclock_s = start.elapsed().as_secs_f64();
    Ok(report)
}
