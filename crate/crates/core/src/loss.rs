//! Training objectives and their per-stage compositions.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BlurKernel, Tape, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{PointVars, V3};
use crate::render::{depth_to_pseudo_normal, render_points, RenderOptions, TapeFrame};
use crate::scene::{argmin3, OlatCapture};
use crate::shading::ShadingMode;
use crate::visibility::{transmittance_tape, Bvh};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;
pub const SMOOTH_WINDOW: usize = 9;
pub const SMOOTH_SIGMA: f64 = 1.5;
pub const ENTROPY_CLAMP: f64 = 1e-4;
pub const PRIOR_DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// D-SSIM share of the reconstruction loss.
    pub lambda_dssim: f64,
    pub normal_pred: f64,
    pub normal_residual: f64,
    pub flatten: f64,
    pub opacity: f64,
    pub visibility: f64,
    pub smooth: f64,
    pub diffuse_start: f64,
    pub diffuse_end: f64,
    pub diffuse_horizon: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            normal_pred: 0.1,
            normal_residual: 0.001,
            flatten: 1e-5,
            opacity: 0.001,
            visibility: 0.01,
            smooth: 0.1,
            diffuse_start: 0.02,
            diffuse_end: 0.002,
            diffuse_horizon: 1000,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_dssim,
            self.normal_pred,
            self.normal_residual,
            self.flatten,
            self.opacity,
            self.visibility,
            self.smooth,
            self.diffuse_start,
            self.diffuse_end,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if self.lambda_dssim > 1.0 {
            return Err(Error::invalid("lambda_dssim must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Diffuse-prior weight, decayed exponentially over the horizon.
    pub fn diffuse_weight(&self, iteration: usize) -> f64 {
        if self.diffuse_horizon == 0 || self.diffuse_start == 0.0 {
            return self.diffuse_end;
        }
        let f = iteration.min(self.diffuse_horizon) as f64 / self.diffuse_horizon as f64;
        self.diffuse_start * (self.diffuse_end / self.diffuse_start).powf(f)
    }
}

/// Source of stop-gradient values.
///
/// `Live` detaches on the fly. `Record` also keeps every detached value,
/// and `Replay` hands them back in call order instead of recomputing them,
/// so a finite-difference probe sees the same frozen targets the analytic
/// gradient treats as constants.
#[derive(Debug, Default)]
pub struct StopGrads {
    mode: StopMode,
    values: RefCell<Vec<Rc<Vec<f64>>>>,
    cursor: RefCell<usize>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
enum StopMode {
    #[default]
    Live,
    Record,
    Replay,
}

impl StopGrads {
    pub fn live() -> Self {
        Self::default()
    }

    pub fn record() -> Self {
        Self {
            mode: StopMode::Record,
            ..Default::default()
        }
    }

    /// Turns a recorder into a replayer of what it saw.
    pub fn into_replay(self) -> Self {
        Self {
            mode: StopMode::Replay,
            values: self.values,
            cursor: RefCell::new(0),
        }
    }

    /// Restarts a replayer from its first value.
    pub fn rewind(&self) {
        *self.cursor.borrow_mut() = 0;
    }

    /// A frozen plain vector.
    pub fn freeze(&self, compute: impl FnOnce() -> Vec<f64>) -> Rc<Vec<f64>> {
        match self.mode {
            StopMode::Live => Rc::new(compute()),
            StopMode::Record => {
                let v = Rc::new(compute());
                self.values.borrow_mut().push(v.clone());
                v
            }
            StopMode::Replay => {
                let mut c = self.cursor.borrow_mut();
                let v = self.values.borrow().get(*c).cloned().expect("replay ran past the recording");
                *c += 1;
                v
            }
        }
    }

    pub fn stop<'t>(&self, v: Var<'t>) -> Var<'t> {
        let frozen = self.freeze(|| v.value().to_vec());
        v.tape().constant(frozen.to_vec())
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a.to_string(),
            found: b.to_string(),
        });
    }
    Ok(())
}

/// Mean SSIM of two interleaved RGB images, averaged over channels.
/// `y` is usually a constant target.
pub fn ssim_var<'t>(x: Var<'t>, y: Var<'t>, width: usize, height: usize) -> Result<Var<'t>> {
    check_len(3 * width * height, x.len())?;
    check_len(x.len(), y.len())?;
    let k = Rc::new(BlurKernel::gaussian(width, height, 3, SSIM_WINDOW, SSIM_SIGMA));
    let mx = x.blur(k.clone());
    let my = y.blur(k.clone());
    let sxx = x.square().blur(k.clone()) - mx.square();
    let syy = y.square().blur(k.clone()) - my.square();
    let sxy = (x * y).blur(k) - mx * my;
    let num = (mx * my * 2.0 + SSIM_C1) * (sxy * 2.0 + SSIM_C2);
    let den = (mx.square() + my.square() + SSIM_C1) * (sxx + syy + SSIM_C2);
    Ok((num / den).mean())
}

/// Mean SSIM of two plain images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.same_size(b)?;
    let tape = Tape::new();
    let s = ssim_var(tape.constant(a.data.clone()), tape.constant(b.data.clone()), a.width, a.height)?;
    Ok(s.item())
}

/// `(1−λ)·mean|r−t| + λ·(1 − SSIM)/2`.
pub fn rgb_loss<'t>(rendered: Var<'t>, target: &Image, lambda: f64) -> Result<Var<'t>> {
    check_len(target.data.len(), rendered.len())?;
    let t = rendered.tape().constant(target.data.clone());
    let l1 = (rendered - t).abs().mean();
    if lambda == 0.0 {
        return Ok(l1);
    }
    let s = ssim_var(rendered, t, target.width, target.height)?;
    Ok(l1 * (1.0 - lambda) + (1.0 - s) * (0.5 * lambda))
}

/// Mean binary entropy of `x` clamped to `[1e-4, 1 − 1e-4]`.
pub fn binary_entropy<'t>(x: Var<'t>) -> Var<'t> {
    let c = x.clamp(ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP);
    let d = 1.0 - c;
    -(c * c.ln() + d * d.ln()).mean()
}

/// Entropy sparsity on opacities and, when given, light visibilities.
pub fn sparse_losses<'t>(opacity: Var<'t>, visibility: Option<Var<'t>>, w: &LossWeights) -> Var<'t> {
    let mut total = binary_entropy(opacity) * w.opacity;
    if let Some(v) = visibility.filter(|v| v.len() > 0) {
        total = total + binary_entropy(v) * w.visibility;
    }
    total
}

/// Predicted-normal agreement with a frozen target plus residual and
/// flatness regularizers.
///
/// `target` is interleaved per pixel; `valid` holds 1 for pixels that count.
pub fn normal_losses<'t>(
    predicted: Var<'t>,
    target: &[f64],
    valid: &[f64],
    pv: &PointVars<'t>,
    w: &LossWeights,
) -> Result<Var<'t>> {
    check_len(target.len(), predicted.len())?;
    check_len(3 * valid.len(), target.len())?;
    let tape = predicted.tape();
    let count: f64 = valid.iter().sum();
    let mut total = tape.scalar(0.0);
    if count > 0.0 {
        let mask: Vec<f64> = valid.iter().flat_map(|&v| [v; 3]).collect();
        let diff = (predicted - tape.constant(target.to_vec())) * tape.constant(mask);
        total = diff.square().sum() * (w.normal_pred / count);
    }
    if pv.len() > 0 {
        let res = pv.normal_out.iter().chain(&pv.normal_in).map(|c| c.square()).reduce(|a, b| a + b).unwrap();
        let ls: [Rc<Vec<f64>>; 3] = std::array::from_fn(|k| pv.log_scale[k].value());
        let axis: Vec<usize> = (0..pv.len()).map(|i| argmin3([ls[0][i], ls[1][i], ls[2][i]])).collect();
        let smin = (0..3)
            .map(|k| pv.scale[k] * tape.constant(axis.iter().map(|&a| if a == k { 1.0 } else { 0.0 }).collect()))
            .reduce(|a, b| a + b)
            .unwrap();
        total = total + res.mean() * w.normal_residual + smin.mean() * w.flatten;
    }
    Ok(total)
}

/// Mean L1 distance of each image to its own frozen 9×9 blur, summed over
/// images and weighted.
pub fn smooth_loss<'t>(images: &[Var<'t>], width: usize, height: usize, weight: f64, stops: &StopGrads) -> Result<Var<'t>> {
    let k = BlurKernel::gaussian(width, height, 3, SMOOTH_WINDOW, SMOOTH_SIGMA);
    let mut total: Option<Var<'t>> = None;
    for &img in images {
        check_len(k.len(), img.len())?;
        let blurred = stops.freeze(|| k.apply(&img.value()));
        let term = (img - img.tape().constant(blurred.to_vec())).abs().mean();
        total = Some(total.map_or(term, |t| t + term));
    }
    let total = total.ok_or_else(|| Error::invalid("smooth loss needs at least one image"))?;
    Ok(total * weight)
}

/// Per-channel least-squares scale `s` of diffuse onto frozen ambient,
/// `s_k = Σ a_k d_k / max(Σ d_k², 1e-12)`.
pub fn diffuse_scale<'t>(ambient: &V3<'t>, diffuse: &V3<'t>, stops: &StopGrads) -> V3<'t> {
    std::array::from_fn(|k| {
        let a = stops.stop(ambient[k]);
        (a * diffuse[k]).sum() / diffuse[k].square().sum().max_const(PRIOR_DENOM_FLOOR)
    })
}

/// `weight · mean_i ‖a_i − s ⊙ d_i‖²`.
pub fn diffuse_prior_loss<'t>(ambient: &V3<'t>, diffuse: &V3<'t>, weight: f64, stops: &StopGrads) -> Var<'t> {
    let s = diffuse_scale(ambient, diffuse, stops);
    let per_point = (0..3)
        .map(|k| (ambient[k] - diffuse[k] * s[k].broadcast(diffuse[k].len())).square())
        .reduce(|a, b| a + b)
        .unwrap();
    per_point.mean() * weight
}

/// Plain evaluation of the diffuse prior for a fixed `s`.
pub fn diffuse_prior_value(ambient: &[[f64; 3]], diffuse: &[[f64; 3]], s: [f64; 3]) -> f64 {
    let n = ambient.len() as f64;
    ambient
        .iter()
        .zip(diffuse)
        .map(|(a, d)| (0..3).map(|k| (a[k] - s[k] * d[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n
}

/// Closed-form `s` of [`diffuse_prior_loss`] on plain colors.
pub fn diffuse_scale_value(ambient: &[[f64; 3]], diffuse: &[[f64; 3]]) -> [f64; 3] {
    std::array::from_fn(|k| {
        let num: f64 = ambient.iter().zip(diffuse).map(|(a, d)| a[k] * d[k]).sum();
        let den: f64 = diffuse.iter().map(|d| d[k] * d[k]).sum();
        num / den.max(PRIOR_DENOM_FLOOR)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
    Three,
}

impl Stage {
    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            _ => Err(Error::invalid(format!("unknown stage {i}"))),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }

    pub fn shading_mode(self) -> ShadingMode {
        match self {
            Stage::One => ShadingMode::Ambient,
            Stage::Two => ShadingMode::AmbientNormals,
            Stage::Three => ShadingMode::Full,
        }
    }
}

/// Scalar values of the individual loss terms, for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rgb: f64,
    pub sparse: f64,
    pub normal: f64,
    pub smooth: f64,
    pub diffuse: f64,
}

pub struct StageLoss<'t> {
    pub total: Var<'t>,
    pub terms: LossBreakdown,
}

/// Loss of one capture for `stage`.
///
/// In stage 3 `shadow` selects between the shadow-free Phong loss (`None`)
/// and the shadowed one, whose visibility is traced through the BVH.
#[allow(clippy::too_many_arguments)]
pub fn stage_loss<'t>(
    params: Var<'t>,
    capture: &OlatCapture,
    stage: Stage,
    shadow: Option<&Bvh>,
    weights: &LossWeights,
    iteration: usize,
    opts: &RenderOptions,
    stops: &StopGrads,
) -> Result<StageLoss<'t>> {
    let pv = PointVars::all(params);
    let visibility = match (stage, shadow) {
        (Stage::Three, Some(bvh)) => Some(transmittance_tape(params, bvh, &capture.light)?),
        _ => None,
    };
    let frame = render_points(&pv, &capture.camera, &capture.light, visibility, stage.shading_mode(), opts)?;
    let rgb = rgb_loss(frame.color, &capture.image, weights.lambda_dssim)?;
    let sparse = sparse_losses(pv.opacity, visibility, weights);
    let mut terms = LossBreakdown {
        rgb: rgb.item(),
        sparse: sparse.item(),
        ..Default::default()
    };
    let mut total = rgb + sparse;
    if stage != Stage::One {
        let (normal, smooth) = geometry_losses(&pv, &frame, &capture.camera, weights, stops)?;
        terms.normal = normal.item();
        terms.smooth = smooth.item();
        total = total + normal + smooth;
    }
    if stage == Stage::Three {
        let prior = diffuse_prior_loss(&pv.ambient, &pv.diffuse, weights.diffuse_weight(iteration), stops);
        terms.diffuse = prior.item();
        total = total + prior;
    }
    terms.total = total.item();
    Ok(StageLoss { total, terms })
}

fn geometry_losses<'t>(
    pv: &PointVars<'t>,
    frame: &TapeFrame<'t>,
    camera: &crate::scene::Camera,
    weights: &LossWeights,
    stops: &StopGrads,
) -> Result<(Var<'t>, Var<'t>)> {
    let predicted = frame
        .normalized_normal()
        .ok_or_else(|| Error::invalid("normal losses need a render with normals"))?;
    let alpha = frame.alpha.value();
    let mut valid = Vec::new();
    let target = stops.freeze(|| {
        let pn = depth_to_pseudo_normal(&frame.depth, &alpha, camera);
        valid = pn.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
        pn.to_world(camera)
    });
    let valid = stops.freeze(|| valid);
    let normal = normal_losses(predicted, &target, &valid, pv, weights)?;
    let mut images = vec![predicted, frame.ambient];
    images.extend(frame.diffuse);
    images.extend(frame.specular);
    let smooth = smooth_loss(&images, frame.width, frame.height, weights.smooth, stops)?;
    Ok((normal, smooth))
}

#[cfg(test)]
mod tests;
