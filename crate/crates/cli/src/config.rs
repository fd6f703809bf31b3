//! Training configuration file.
//!
//! Precedence, lowest first: built-in defaults, the TOML file given with
//! `--config`, then command-line flags.
//!
//! ```toml
//! data = "captures/train"
//! out = "runs/sphere"
//! points = 300
//!
//! [train]
//! iterations = [10000, 5000, 2000]
//! seed = 3
//! shadows = true
//!
//! [train.weights]
//! lambda_dssim = 0.2
//! ```

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use phong_splat::train::TrainConfig;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub init: Option<PathBuf>,
    /// Size of the random starting cloud when no initial checkpoint exists.
    pub points: Option<usize>,
    pub srgb: bool,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
