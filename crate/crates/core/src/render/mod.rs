//! Projection, rasterization and compositing of Gaussian splats.

mod frame;
mod normals;
mod project;
mod raster;
mod tape;

pub use frame::render_frame;
pub use normals::{depth_to_pseudo_normal, PseudoNormals, MIN_DEPTH_ALPHA};
pub use project::{project_gaussian, project_params, Splat2D, LOW_PASS, NEAR_PLANE};
pub use raster::{
    blend, build_fragments, depth_order, fragment_alpha, mahalanobis, rasterize, FrameBuffers, Fragments,
    ScreenSplat, SplatShading, ALPHA_FLOOR, ALPHA_MAX, ALPHA_MIN, CUTOFF,
};
pub use tape::{render_points, render_tape, RenderOptions, TapeFrame};
