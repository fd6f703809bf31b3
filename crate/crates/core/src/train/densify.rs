use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Attr, ParamSet};
use crate::scene::{covariance, sigmoid, ATTRIBUTE_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: usize,
    pub prune_opacity: f64,
    pub clone_gradient: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            interval: 500,
            prune_opacity: 0.005,
            clone_gradient: 2e-4,
        }
    }
}

/// Running per-point positional gradient statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradStats {
    pub sum_norm: Vec<f64>,
    /// Summed gradient direction, for the clone offset.
    pub sum_grad: Vec<[f64; 3]>,
    pub count: usize,
}

impl GradStats {
    pub fn new(num_points: usize) -> Self {
        Self {
            sum_norm: vec![0.0; num_points],
            sum_grad: vec![[0.0; 3]; num_points],
            count: 0,
        }
    }

    pub fn accumulate(&mut self, grad: &[f64]) {
        for i in 0..self.sum_norm.len() {
            let g = &grad[ParamSet::index(i, Attr::Position, 0)..][..3];
            self.sum_norm[i] += (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            for k in 0..3 {
                self.sum_grad[i][k] += g[k];
            }
        }
        self.count += 1;
    }

    pub fn mean_norm(&self, i: usize) -> f64 {
        if self.count == 0 { 0.0 } else { self.sum_norm[i] / self.count as f64 }
    }
}

/// Prunes nearly transparent points and clones points with large mean
/// positional gradient. Returns the new set and, for every new point, the
/// old point it came from (`None` for clones).
pub fn densify_and_prune(params: &ParamSet, stats: &GradStats, cfg: &DensifyConfig) -> (ParamSet, Vec<Option<usize>>) {
    let mut values = Vec::with_capacity(params.len());
    let mut sources = Vec::new();
    let mut clones = Vec::new();
    for i in 0..params.num_points() {
        let p = params.point(i);
        if sigmoid(p[10]) < cfg.prune_opacity {
            continue;
        }
        values.extend_from_slice(p);
        sources.push(Some(i));
        let g = Vector3::from(stats.sum_grad.get(i).copied().unwrap_or_default());
        if stats.mean_norm(i) > cfg.clone_gradient {
            if let Some(dir) = (-g).try_normalize(1e-300) {
                // Half the 1σ ellipsoid radius along `dir`.
                let precision = covariance([p[3], p[4], p[5], p[6]], Vector3::new(-p[7], -p[8], -p[9]));
                let step = 0.5 / dir.dot(&(precision * dir)).sqrt();
                let mut c = p.to_vec();
                for k in 0..3 {
                    c[k] += step * dir[k];
                }
                clones.push(c);
            }
        }
    }
    for c in clones {
        values.extend(c);
        sources.push(None);
    }
    debug_assert_eq!(values.len(), sources.len() * ATTRIBUTE_COUNT);
    (ParamSet { values }, sources)
}
