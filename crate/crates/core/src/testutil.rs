//! Shared fixtures for unit tests.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scene::{logit, Camera, GaussianPoint, PointLight};

pub fn camera(size: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.3, -0.2, -3.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        50f64.to_radians(),
        size,
        size,
    )
    .unwrap()
}

pub fn light() -> PointLight {
    PointLight::white(Vector3::new(1.5, -1.0, -2.0))
}

pub fn random_points(n: usize, seed: u64) -> Vec<GaussianPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut q: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            q[0] += 1.5;
            GaussianPoint {
                position: std::array::from_fn(|_| rng.gen_range(-0.6..0.6)),
                rotation: q,
                log_scale: std::array::from_fn(|_| rng.gen_range(-2.2f32..-1.2)),
                opacity_logit: logit(rng.gen_range(0.3..0.9)) as f32,
                ambient_color: std::array::from_fn(|_| rng.gen_range(0.0..0.5)),
                normal_residual_out: std::array::from_fn(|_| rng.gen_range(-0.1..0.1)),
                normal_residual_in: std::array::from_fn(|_| rng.gen_range(-0.1..0.1)),
                diffuse_color: std::array::from_fn(|_| rng.gen_range(0.0..1.0)),
                specular_coeff: rng.gen_range(0.0..0.5),
                shadow_coeff_logit: rng.gen_range(-1.0..2.0),
            }
        })
        .collect()
}
