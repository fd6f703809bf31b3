use nalgebra::Vector3;

use crate::scene::Camera;

/// Pixels with accumulated alpha at or below this carry no depth.
pub const MIN_DEPTH_ALPHA: f64 = 0.05;

/// Camera-space normals estimated from a depth map.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoNormals {
    /// Interleaved unit normals, zero where invalid.
    pub normals: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PseudoNormals {
    /// Rotates the normals into world space.
    pub fn to_world(&self, camera: &Camera) -> Vec<f64> {
        let rt = camera.rotation().transpose();
        let mut out = vec![0.0; self.normals.len()];
        for (o, n) in out.chunks_exact_mut(3).zip(self.normals.chunks_exact(3)) {
            let w = rt * Vector3::new(n[0], n[1], n[2]);
            o.copy_from_slice(w.as_slice());
        }
        out
    }
}

/// Back-projects every pixel of `depth` and takes the cross product of its
/// horizontal and vertical differences. Central differences are used where
/// both neighbors carry depth, one-sided ones otherwise. Normals are flipped
/// to face the camera.
pub fn depth_to_pseudo_normal(depth: &[f64], alpha: &[f64], camera: &Camera) -> PseudoNormals {
    let (w, h) = (camera.width, camera.height);
    let has = |x: usize, y: usize| alpha[y * w + x] > MIN_DEPTH_ALPHA && depth[y * w + x].is_finite();
    let point = |x: usize, y: usize| {
        let z = depth[y * w + x];
        Vector3::new(
            z * (x as f64 + 0.5 - camera.cx) / camera.fx,
            z * (y as f64 + 0.5 - camera.cy) / camera.fy,
            z,
        )
    };
    let mut normals = vec![0.0; 3 * w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !has(x, y) {
                continue;
            }
            let c = point(x, y);
            let left = (x > 0 && has(x - 1, y)).then(|| point(x - 1, y));
            let right = (x + 1 < w && has(x + 1, y)).then(|| point(x + 1, y));
            let up = (y > 0 && has(x, y - 1)).then(|| point(x, y - 1));
            let down = (y + 1 < h && has(x, y + 1)).then(|| point(x, y + 1));
            let diff = |a: Option<Vector3<f64>>, b: Option<Vector3<f64>>| match (a, b) {
                (Some(a), Some(b)) => Some(b - a),
                (None, Some(b)) => Some(b - c),
                (Some(a), None) => Some(c - a),
                (None, None) => None,
            };
            let (Some(dx), Some(dy)) = (diff(left, right), diff(up, down)) else {
                continue;
            };
            let Some(mut n) = dx.cross(&dy).try_normalize(1e-300) else {
                continue;
            };
            if n.dot(&c) > 0.0 {
                n = -n;
            }
            let p = y * w + x;
            normals[3 * p..3 * p + 3].copy_from_slice(n.as_slice());
            valid[p] = true;
        }
    }
    PseudoNormals { normals, valid }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;

    fn cam() -> Camera {
        Camera::new(Matrix4::identity(), 20.0, 20.0, 8.0, 8.0, 16, 16).unwrap()
    }

    #[test]
    fn fronto_parallel_plane() {
        let c = cam();
        let pn = depth_to_pseudo_normal(&[2.0; 256], &[1.0; 256], &c);
        assert!(pn.valid.iter().all(|&v| v));
        for n in pn.normals.chunks_exact(3) {
            assert!(n[0].abs() < 1e-12 && n[1].abs() < 1e-12 && (n[2] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tilted_plane() {
        // Plane through (0, 0, 3) with normal (0, -1, -1)/√2: z = 3 - y.
        let c = cam();
        let mut depth = vec![0.0; 256];
        for y in 0..16 {
            for x in 0..16 {
                let ry = (y as f64 + 0.5 - c.cy) / c.fy;
                depth[y * 16 + x] = 3.0 / (1.0 + ry);
            }
        }
        let pn = depth_to_pseudo_normal(&depth, &[1.0; 256], &c);
        let expect = Vector3::new(0.0, -1.0, -1.0).normalize();
        for y in 1..15 {
            for x in 1..15 {
                let p = y * 16 + x;
                let n = Vector3::new(pn.normals[3 * p], pn.normals[3 * p + 1], pn.normals[3 * p + 2]);
                assert!(n.angle(&expect).to_degrees() < 1.0);
            }
        }
    }

    #[test]
    fn empty_depth_is_invalid() {
        let pn = depth_to_pseudo_normal(&[0.0; 256], &[0.0; 256], &cam());
        assert!(pn.valid.iter().all(|&v| !v));
    }
}
