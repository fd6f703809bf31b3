use nalgebra::{Matrix2x3, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scene::{covariance, Camera, GaussianPoint};

/// Points at or closer than this camera depth are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to the diagonal of the screen covariance (pixels²) before inversion.
pub const LOW_PASS: f64 = 0.3;

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Pixel-space mean.
    pub mean: [f64; 2],
    /// Screen covariance `(xx, xy, yy)` before the low-pass term.
    pub cov: [f64; 3],
    /// Camera-space depth.
    pub depth: f64,
    pub id: usize,
    pub opacity: f64,
}

impl Splat2D {
    /// Inverse of the low-passed screen covariance, `(xx, xy, yy)`.
    pub fn conic(&self) -> Result<[f64; 3]> {
        conic_of(self.cov[0] + LOW_PASS, self.cov[1], self.cov[2] + LOW_PASS)
            .ok_or(Error::SingularCovariance { point: self.id })
    }

    /// Pixel radius enclosing the 3σ ellipse of the low-passed covariance.
    pub fn radius(&self) -> f64 {
        radius_of(self.cov[0] + LOW_PASS, self.cov[1], self.cov[2] + LOW_PASS)
    }
}

pub(crate) fn conic_of(a: f64, b: f64, c: f64) -> Option<[f64; 3]> {
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some([c / det, -b / det, a / det])
}

pub(crate) fn radius_of(a: f64, b: f64, c: f64) -> f64 {
    let mid = 0.5 * (a + c);
    let lambda = mid + (mid * mid - (a * c - b * b)).max(0.0).sqrt();
    3.0 * lambda.sqrt()
}

/// Projects the Gaussian record `p` (see [`crate::autodiff::ParamSet`]).
pub fn project_params(p: &[f64], id: usize, camera: &Camera) -> Option<Splat2D> {
    let mu = Vector3::new(p[0], p[1], p[2]);
    let t = camera.to_camera(&mu);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let sigma = covariance([p[3], p[4], p[5], p[6]], Vector3::new(p[7], p[8], p[9]));
    let w: Matrix3<f64> = camera.rotation();
    let (fx, fy) = (camera.fx, camera.fy);
    let j = Matrix2x3::new(
        fx / t.z,
        0.0,
        -fx * t.x / (t.z * t.z),
        0.0,
        fy / t.z,
        -fy * t.y / (t.z * t.z),
    );
    let jw = j * w;
    let cov = jw * sigma * jw.transpose();
    Some(Splat2D {
        mean: [fx * t.x / t.z + camera.cx, fy * t.y / t.z + camera.cy],
        cov: [cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]],
        depth: t.z,
        id,
        opacity: crate::scene::sigmoid(p[10]),
    })
}

/// Projects `point` into `camera`; `None` when it lies behind the near plane.
pub fn project_gaussian(point: &GaussianPoint, id: usize, camera: &Camera) -> Option<Splat2D> {
    project_params(&point.to_array().map(f64::from), id, camera)
}
