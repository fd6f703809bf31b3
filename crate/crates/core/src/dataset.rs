//! `transforms.json` dataset manifests.
//!
//! ```json
//! { "fx": 70.0, "fy": 70.0, "cx": 32.0, "cy": 32.0, "w": 64, "h": 64,
//!   "frames": [ { "file_path": "images/0000.png",
//!                 "transform_matrix": [[...], [...], [...], [...]],
//!                 "light_position": [0.0, 3.0, 4.0],
//!                 "light_color": [1.0, 1.0, 1.0] } ] }
//! ```
//!
//! `transform_matrix` is camera-to-world, row-major, in the +x right, +y
//! down, +z forward camera convention. `light_color` defaults to white.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{Camera, Dataset, OlatCapture, PointLight};

pub const MANIFEST_NAME: &str = "transforms.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: usize,
    pub h: usize,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub file_path: String,
    pub transform_matrix: [[f64; 4]; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub light_position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub light_color: Option<[f64; 3]>,
}

/// Loads every frame listed in `dir/transforms.json`.
pub fn load_dataset(dir: &Path, srgb: bool) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        message: e.to_string(),
    })?;
    if manifest.frames.is_empty() {
        return Err(Error::Manifest {
            path: manifest_path,
            message: "no frames".into(),
        });
    }

    let mut captures = Vec::with_capacity(manifest.frames.len());
    for (index, frame) in manifest.frames.iter().enumerate() {
        let frame_err = |message: String| Error::Frame { index, message };
        let light_position = frame
            .light_position
            .ok_or_else(|| frame_err("missing light_position".into()))?;
        let light_color = frame.light_color.unwrap_or([1.0; 3]);
        let light = PointLight::new(Vector3::from(light_position), Vector3::from(light_color))
            .map_err(|e| frame_err(e.to_string()))?;

        let c2w = Matrix4::from_fn(|r, c| frame.transform_matrix[r][c]);
        let camera = Camera::from_camera_to_world(
            &c2w,
            manifest.fx,
            manifest.fy,
            manifest.cx,
            manifest.cy,
            manifest.w,
            manifest.h,
        )
        .map_err(|e| frame_err(e.to_string()))?;

        let image_path = resolve_image(dir, &frame.file_path);
        let image = Image::load_png(&image_path, srgb)
            .map_err(|e| frame_err(format!("unreadable image: {e}")))?;
        if image.width != manifest.w || image.height != manifest.h {
            return Err(frame_err(format!(
                "image dimension mismatch: {}x{} but manifest says {}x{}",
                image.width, image.height, manifest.w, manifest.h
            )));
        }
        captures.push(OlatCapture::new(image, camera, light).map_err(|e| frame_err(e.to_string()))?);
    }

    let name = manifest.name.clone().unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    Dataset::new(name, captures)
}

fn resolve_image(dir: &Path, file_path: &str) -> PathBuf {
    let p = dir.join(file_path);
    if p.extension().is_none() && !p.exists() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Writes `dataset` as 16-bit PNGs plus a manifest. All captures must share
/// intrinsics.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let cam0 = &dataset.captures[0].camera;
    let mut frames = Vec::with_capacity(dataset.len());
    for (i, cap) in dataset.captures.iter().enumerate() {
        let c = &cap.camera;
        if (c.fx, c.fy, c.cx, c.cy) != (cam0.fx, cam0.fy, cam0.cx, cam0.cy) {
            return Err(Error::Frame {
                index: i,
                message: "intrinsics differ from frame 0".into(),
            });
        }
        let rel = format!("images/{i:04}.png");
        cap.image.save_png16(&dir.join(&rel))?;
        let m = c.camera_to_world();
        frames.push(ManifestFrame {
            file_path: rel,
            transform_matrix: std::array::from_fn(|r| std::array::from_fn(|k| m[(r, k)])),
            light_position: Some(cap.light.position.into()),
            light_color: Some(cap.light.color.into()),
        });
    }
    let manifest = Manifest {
        name: Some(dataset.name.clone()),
        fx: cam0.fx,
        fy: cam0.fy,
        cx: cam0.cx,
        cy: cam0.cy,
        w: cam0.width,
        h: cam0.height,
        frames,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
