//! Relightable Gaussian splatting for one-light-at-a-time captures.
//!
//! Each Gaussian carries an ambient color plus Blinn-Phong diffuse and
//! specular coefficients, a shading normal derived from its shortest axis,
//! and a shadow coefficient that scales its opacity when it occludes a light
//! ray. Rendering is a software splat rasterizer recorded on a
//! differentiable tape; light visibility is traced through a BVH. Training
//! runs in three stages, the last one a bilevel meta-learning loop over
//! tasks grouped by light position.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod loss;
pub mod model;
pub mod oracle;
pub mod render;
pub mod scene;
pub mod shading;
pub mod train;
pub mod visibility;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
