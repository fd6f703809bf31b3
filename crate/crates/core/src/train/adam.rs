use serde::{Deserialize, Serialize};

use crate::autodiff::{Attr, ParamSet};
use crate::error::{Error, Result};
use crate::scene::ATTRIBUTE_COUNT;

/// Per-attribute learning rates. Position decays exponentially from
/// `position_init` to `position_final` over `position_steps` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position_init: f64,
    pub position_final: f64,
    pub position_steps: usize,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity: f64,
    /// Ambient, diffuse, specular and normal residuals.
    pub color: f64,
    pub shadow: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position_init: 1.6e-4,
            position_final: 1.6e-6,
            position_steps: 17_000,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity: 0.05,
            color: 2.5e-3,
            shadow: 5e-3,
        }
    }
}

impl LearningRates {
    pub fn position_at(&self, iteration: usize) -> f64 {
        if self.position_steps == 0 || self.position_init <= 0.0 || self.position_final <= 0.0 {
            return self.position_final;
        }
        let t = iteration.min(self.position_steps) as f64 / self.position_steps as f64;
        self.position_init * (self.position_final / self.position_init).powf(t)
    }

    pub fn of(&self, attr: Attr, iteration: usize) -> f64 {
        match attr {
            Attr::Position => self.position_at(iteration),
            Attr::Rotation => self.rotation,
            Attr::LogScale => self.log_scale,
            Attr::Opacity => self.opacity,
            Attr::Ambient | Attr::NormalOut | Attr::NormalIn | Attr::Diffuse | Attr::Specular => self.color,
            Attr::Shadow => self.shadow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position_init,
            self.position_final,
            self.rotation,
            self.log_scale,
            self.opacity,
            self.color,
            self.shadow,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("learning rates must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Bias-corrected Adam with per-attribute learning rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub rates: LearningRates,
}

impl Adam {
    pub fn new(len: usize, rates: LearningRates) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            rates,
        }
    }

    /// One update of the coordinates where `mask` is non-zero; `iteration`
    /// drives the position schedule. Afterwards quaternions are renormalized
    /// and colors clamped to be non-negative.
    pub fn step(&mut self, params: &mut ParamSet, grad: &[f64], mask: &[f64], iteration: usize) -> Result<()> {
        let n = params.len();
        if grad.len() != n || mask.len() != n || self.m.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} gradient, mask and moment entries"),
                found: format!("{}, {}, {}", grad.len(), mask.len(), self.m.len()),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            let (point, attr, _) = ParamSet::locate(i);
            return Err(Error::NonFiniteGradient {
                name: attr.name(),
                point,
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powf(self.step as f64);
        let bc2 = 1.0 - self.beta2.powf(self.step as f64);
        let lr: Vec<f64> = (0..ATTRIBUTE_COUNT).map(|s| self.rates.of(Attr::of_slot(s), iteration)).collect();
        for i in 0..n {
            if mask[i] == 0.0 {
                continue;
            }
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params.values[i] -= mask[i] * lr[i % ATTRIBUTE_COUNT] * mh / (vh.sqrt() + self.eps);
        }
        project(params);
        Ok(())
    }

    /// Rebuilds the moments after the point set changed: new point `k`
    /// inherits from old point `sources[k]`, or starts at zero for `None`.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let pick = |old: &[f64]| -> Vec<f64> {
            sources
                .iter()
                .flat_map(|s| match s {
                    Some(i) => old[i * ATTRIBUTE_COUNT..(i + 1) * ATTRIBUTE_COUNT].to_vec(),
                    None => vec![0.0; ATTRIBUTE_COUNT],
                })
                .collect()
        };
        self.m = pick(&self.m);
        self.v = pick(&self.v);
    }
}

/// Renormalizes quaternions and clamps colors to be non-negative.
pub fn project(params: &mut ParamSet) {
    for i in 0..params.num_points() {
        let q = params.get_mut(i, Attr::Rotation);
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 && n.is_finite() {
            q.iter_mut().for_each(|v| *v /= n);
        } else {
            q.copy_from_slice(&[1.0, 0.0, 0.0, 0.0]);
        }
        for attr in [Attr::Ambient, Attr::Diffuse, Attr::Specular] {
            params.get_mut(i, attr).iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
}
