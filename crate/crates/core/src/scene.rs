//! Scene primitives: Gaussians, pinhole cameras, point lights and captures.
//!
//! Cameras follow the usual computer-vision convention: +x right, +y down,
//! +z forward. Pixel `(x, y)` covers the continuous square
//! `[x, x + 1) × [y, y + 1)` and is sampled at its center.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::image::Image;

/// Number of scalar attributes stored per Gaussian.
pub const ATTRIBUTE_COUNT: usize = 25;

/// One scene primitive.
///
/// Values are stored in single precision, the same precision used by
/// checkpoints, so a save/load round trip is exact. Optimization happens on
/// double-precision copies (see [`crate::autodiff::ParamSet`]).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPoint {
    pub position: [f32; 3],
    /// Quaternion `(w, x, y, z)`.
    pub rotation: [f32; 4],
    pub log_scale: [f32; 3],
    pub opacity_logit: f32,
    /// Degree-0 color term, linear RGB.
    pub ambient_color: [f32; 3],
    /// Normal residual used when the shortest axis faces the viewer.
    pub normal_residual_out: [f32; 3],
    /// Normal residual used when the shortest axis faces away.
    pub normal_residual_in: [f32; 3],
    pub diffuse_color: [f32; 3],
    pub specular_coeff: f32,
    /// Occluder strength logit; see [`GaussianPoint::shadow_coeff`].
    pub shadow_coeff_logit: f32,
}

impl Default for GaussianPoint {
    fn default() -> Self {
        Self {
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.0; 3],
            opacity_logit: 0.0,
            ambient_color: [0.0; 3],
            normal_residual_out: [0.0; 3],
            normal_residual_in: [0.0; 3],
            diffuse_color: [0.0; 3],
            specular_coeff: 0.0,
            shadow_coeff_logit: 0.0,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl GaussianPoint {
    /// Flattens the attributes in declaration order.
    pub fn to_array(&self) -> [f32; ATTRIBUTE_COUNT] {
        let mut out = [0.0f32; ATTRIBUTE_COUNT];
        let mut k = 0;
        let mut put = |vals: &[f32]| {
            out[k..k + vals.len()].copy_from_slice(vals);
            k += vals.len();
        };
        put(&self.position);
        put(&self.rotation);
        put(&self.log_scale);
        put(&[self.opacity_logit]);
        put(&self.ambient_color);
        put(&self.normal_residual_out);
        put(&self.normal_residual_in);
        put(&self.diffuse_color);
        put(&[self.specular_coeff]);
        put(&[self.shadow_coeff_logit]);
        out
    }

    pub fn from_array(a: &[f32; ATTRIBUTE_COUNT]) -> Self {
        let v3 = |i: usize| [a[i], a[i + 1], a[i + 2]];
        Self {
            position: v3(0),
            rotation: [a[3], a[4], a[5], a[6]],
            log_scale: v3(7),
            opacity_logit: a[10],
            ambient_color: v3(11),
            normal_residual_out: v3(14),
            normal_residual_in: v3(17),
            diffuse_color: v3(20),
            specular_coeff: a[23],
            shadow_coeff_logit: a[24],
        }
    }

    pub fn mean(&self) -> Vector3<f64> {
        to_vec3(self.position)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    /// Shadow coefficient in `(0, 1)`. It scales this Gaussian's opacity when
    /// it acts as an occluder on a light ray and never touches its own
    /// rendered alpha.
    pub fn shadow_coeff(&self) -> f64 {
        sigmoid(self.shadow_coeff_logit as f64)
    }

    pub fn scale(&self) -> Vector3<f64> {
        to_vec3(self.log_scale).map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quaternion_to_matrix(self.rotation.map(f64::from))
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance(self.rotation.map(f64::from), to_vec3(self.log_scale))
    }

    /// Inverse covariance `R S⁻² Rᵀ`.
    pub fn precision(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let inv_s2 = Matrix3::from_diagonal(&self.scale().map(|s| 1.0 / (s * s)));
        r * inv_s2 * r.transpose()
    }

    /// Index of the axis with the smallest scale; ties go to the lowest index.
    pub fn shortest_axis(&self) -> usize {
        argmin3(self.log_scale.map(f64::from))
    }
}

pub(crate) fn argmin3(v: [f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if v[k] < v[best] {
            best = k;
        }
    }
    best
}

pub fn to_vec3(v: [f32; 3]) -> Vector3<f64> {
    Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64)
}

pub fn from_vec3(v: &Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quaternion_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion `(w, x, y, z)` of a proper rotation matrix.
pub fn matrix_to_quaternion(m: &Matrix3<f64>) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*m);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    [q.w, q.i, q.j, q.k]
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance(rotation: [f64; 4], log_scale: Vector3<f64>) -> Matrix3<f64> {
    let r = quaternion_to_matrix(rotation);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    let sigma = m * m.transpose();
    // Exact symmetry regardless of summation order.
    (sigma + sigma.transpose()) * 0.5
}

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        world_to_camera: Matrix4<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            world_to_camera,
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn from_camera_to_world(
        camera_to_world: &Matrix4<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let r = camera_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let c = camera_to_world.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(rigid(&r.transpose(), &(-(r.transpose() * c))), fx, fy, cx, cy, width, height)
    }

    /// Camera at `eye` looking at `target`, with image-up roughly along
    /// world `up`. The field of view is horizontal, in radians.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::invalid("look_at: eye coincides with target"))?;
        let mut up = up;
        if forward.cross(&up).norm() < 1e-6 {
            up = if forward.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        }
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self::new(
            rigid(&r, &(-(r * eye))),
            f,
            f,
            0.5 * width as f64,
            0.5 * height as f64,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera width and height must be >= 1"));
        }
        if !(self.fx.is_finite() && self.fy.is_finite() && self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("camera focal lengths must be positive"));
        }
        let r = self.rotation();
        let orth = (r * r.transpose() - Matrix3::identity()).abs().max();
        if orth > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("camera rotation is not a proper rotation"));
        }
        if self.world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("camera transform is not finite"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn camera_to_world(&self) -> Matrix4<f64> {
        let r = self.rotation().transpose();
        rigid(&r, &self.center())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// World-space unit direction of the ray through continuous pixel
    /// coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation().transpose() * d).normalize()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

fn rigid(r: &Matrix3<f64>, t: &Vector3<f64>) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Point light with unit emitted intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLight {
    pub position: Vector3<f64>,
    pub color: Vector3<f64>,
}

impl PointLight {
    pub fn new(position: Vector3<f64>, color: Vector3<f64>) -> Result<Self> {
        let light = Self { position, color };
        light.validate()?;
        Ok(light)
    }

    pub fn white(position: Vector3<f64>) -> Self {
        Self {
            position,
            color: Vector3::repeat(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.position.iter().chain(self.color.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("light position and color must be finite"));
        }
        if self.color.iter().any(|&c| c < 0.0) {
            return Err(Error::invalid("light color must be non-negative"));
        }
        Ok(())
    }
}

/// One image together with the camera and light it was taken under.
#[derive(Debug, Clone, PartialEq)]
pub struct OlatCapture {
    pub image: Image,
    pub camera: Camera,
    pub light: PointLight,
}

impl OlatCapture {
    pub fn new(image: Image, camera: Camera, light: PointLight) -> Result<Self> {
        if image.width != camera.width || image.height != camera.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", camera.width, camera.height),
                found: format!("{}x{}", image.width, image.height),
            });
        }
        Ok(Self {
            image,
            camera,
            light,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub captures: Vec<OlatCapture>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, captures: Vec<OlatCapture>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            captures,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .captures
            .first()
            .ok_or_else(|| Error::invalid("dataset has no captures"))?;
        for (index, c) in self.captures.iter().enumerate() {
            if c.image.width != first.image.width || c.image.height != first.image.height {
                return Err(Error::Frame {
                    index,
                    message: format!(
                        "image is {}x{}, expected {}x{}",
                        c.image.width, c.image.height, first.image.width, first.image.height
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.captures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captures.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn covariance_identity() {
        let s = covariance([1.0, 0.0, 0.0, 0.0], Vector3::zeros());
        assert_relative_eq!(s, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn covariance_axis_scaling() {
        let s = covariance([1.0, 0.0, 0.0, 0.0], Vector3::new(2f64.ln(), 0.0, 0.0));
        assert_relative_eq!(s, Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn covariance_rotated_about_z() {
        // 90 degrees about z: q = (cos 45°, 0, 0, sin 45°). Expected value
        // worked out by hand: R = [[0,-1,0],[1,0,0],[0,0,1]], R diag(4,1,1) Rᵀ = diag(1,4,1).
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = covariance([h, 0.0, 0.0, h], Vector3::new(2f64.ln(), 0.0, 0.0));
        assert_relative_eq!(s, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)), epsilon = 1e-12);
    }

    #[test]
    fn attribute_array_round_trip() {
        let mut a = [0f32; ATTRIBUTE_COUNT];
        for (i, v) in a.iter_mut().enumerate() {
            *v = i as f32 * 0.5 - 3.0;
        }
        assert_eq!(GaussianPoint::from_array(&a).to_array(), a);
    }

    #[test]
    fn look_at_centers_target() {
        let cam = Camera::look_at(
            Vector3::new(3.0, 1.0, 2.0),
            Vector3::zeros(),
            Vector3::z(),
            0.8,
            32,
            24,
        )
        .unwrap();
        let p = cam.to_camera(&Vector3::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert_relative_eq!(cam.center(), Vector3::new(3.0, 1.0, 2.0), epsilon = 1e-12);
        // World up projects upward in the image (negative camera y).
        assert!(cam.rotation()[(1, 2)] < 0.0);
    }

    #[test]
    fn camera_to_world_round_trip() {
        let cam = Camera::look_at(Vector3::new(0.0, 0.0, 4.0), Vector3::zeros(), Vector3::z(), 0.8, 8, 8)
            .unwrap();
        let back = Camera::from_camera_to_world(&cam.camera_to_world(), cam.fx, cam.fy, cam.cx, cam.cy, 8, 8)
            .unwrap();
        assert_relative_eq!(back.world_to_camera, cam.world_to_camera, epsilon = 1e-12);
    }

    #[test]
    fn rejects_improper_rotation() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = -1.0;
        assert!(Camera::new(m, 1.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(Camera::new(Matrix4::identity(), 1.0, 1.0, 0.0, 0.0, 0, 4).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn covariance_is_psd(
            q in prop::array::uniform4(-1.0f64..1.0),
            ls in prop::array::uniform3(-4.0f64..2.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
            let s = covariance(q, Vector3::from(ls));
            prop_assert!((s - s.transpose()).abs().max() <= 1e-12);
            let eig = s.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-10);
        }
    }
}
