//! Three-stage optimization: ambient reconstruction, normals, then bilevel
//! meta-learning of shading and shadow coefficients over light tasks.

mod adam;
mod densify;
mod tasks;

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{project, Adam, LearningRates};
pub use densify::{densify_and_prune, DensifyConfig, GradStats};
pub use tasks::{partition_lights, partition_tasks, LightTask, KMEANS_ITERATIONS};

use crate::autodiff::{
    eval_through_inner_steps, grad_through_inner_steps, loss_fn, Attr, InnerStep, Loss, ParamSet, Tape, Var,
};
use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::loss::{stage_loss, LossBreakdown, LossWeights, Stage, StopGrads};
use crate::render::RenderOptions;
use crate::scene::{logit, Dataset, GaussianPoint};
use crate::visibility::{build_bvh_params, Bvh};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Iterations of stages 1, 2 and 3.
    pub iterations: [usize; 3],
    /// Tasks drawn per meta-iteration.
    pub tasks_per_iteration: usize,
    pub num_tasks: usize,
    pub support_fraction: f64,
    pub inner_lr_phong: f64,
    pub inner_lr_shadow: f64,
    /// Drop second-order terms of the meta-gradient.
    pub first_order: bool,
    /// Trace shadows in stage 3; off forces visibility to 1.
    pub shadows: bool,
    pub seed: u64,
    pub rates: LearningRates,
    pub weights: LossWeights,
    pub render: RenderOptions,
    pub bvh_rebuild_interval: usize,
    pub densify: DensifyConfig,
    pub log_interval: usize,
    pub checkpoint_interval: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: [10_000, 5_000, 2_000],
            tasks_per_iteration: 4,
            num_tasks: 8,
            support_fraction: 0.5,
            inner_lr_phong: 1e-8,
            inner_lr_shadow: 1e-8,
            first_order: false,
            shadows: true,
            seed: 0,
            rates: LearningRates::default(),
            weights: LossWeights::default(),
            render: RenderOptions::default(),
            bvh_rebuild_interval: 100,
            densify: DensifyConfig::default(),
            log_interval: 50,
            checkpoint_interval: 1000,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        self.weights.validate()?;
        if self.tasks_per_iteration == 0 {
            return Err(Error::invalid("tasks_per_iteration must be at least 1"));
        }
        if self.num_tasks == 0 {
            return Err(Error::invalid("num_tasks must be at least 1"));
        }
        if !(self.support_fraction > 0.0 && self.support_fraction < 1.0) {
            return Err(Error::invalid("support_fraction must lie in (0, 1)"));
        }
        if !(self.inner_lr_phong >= 0.0 && self.inner_lr_shadow >= 0.0) {
            return Err(Error::invalid("inner learning rates must be >= 0"));
        }
        if self.bvh_rebuild_interval == 0 {
            return Err(Error::invalid("bvh_rebuild_interval must be at least 1"));
        }
        if !(self.render.shading.shininess > 0.0) {
            return Err(Error::invalid("shininess must be positive"));
        }
        Ok(())
    }

    /// Total iterations, which is also the position-rate horizon.
    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }
}

/// Attributes trained in each stage.
pub fn stage_attributes(stage: Stage) -> &'static [Attr] {
    match stage {
        Stage::One => &[Attr::Position, Attr::Rotation, Attr::LogScale, Attr::Opacity, Attr::Ambient],
        Stage::Two => &[
            Attr::Position,
            Attr::Rotation,
            Attr::LogScale,
            Attr::Opacity,
            Attr::Ambient,
            Attr::NormalOut,
            Attr::NormalIn,
        ],
        Stage::Three => &Attr::ALL,
    }
}

/// Mask for inner phase A: everything except the shadow coefficient.
pub fn phong_mask(num_points: usize) -> Vec<f64> {
    let attrs: Vec<Attr> = Attr::ALL.iter().copied().filter(|a| *a != Attr::Shadow).collect();
    ParamSet::mask(num_points, &attrs)
}

/// Mask for inner phase B: the shadow coefficient only.
pub fn shadow_mask(num_points: usize) -> Vec<f64> {
    ParamSet::mask(num_points, &[Attr::Shadow])
}

/// Diffuse and specular coefficients and shadow strength at stage-3 entry.
pub const INIT_DIFFUSE_FROM_AMBIENT: f64 = 0.5;
pub const INIT_SPECULAR: f64 = 0.04;
pub const INIT_SHADOW_LOGIT: f64 = 0.0;

pub fn initialize_stage3(params: &mut ParamSet) {
    for i in 0..params.num_points() {
        let ambient: Vec<f64> = params.get(i, Attr::Ambient).to_vec();
        for (d, a) in params.get_mut(i, Attr::Diffuse).iter_mut().zip(&ambient) {
            *d = INIT_DIFFUSE_FROM_AMBIENT * a;
        }
        params.get_mut(i, Attr::Specular)[0] = INIT_SPECULAR;
        params.get_mut(i, Attr::Shadow)[0] = INIT_SHADOW_LOGIT;
    }
}

/// `count` isotropic gray Gaussians spread uniformly through a ball of
/// `radius` around the origin, for captures without a geometric prior.
pub fn random_cloud(count: usize, radius: f64, seed: u64) -> Vec<GaussianPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = (radius / (count.max(1) as f64).cbrt() * 0.5).ln() as f32;
    (0..count)
        .map(|_| {
            let p = loop {
                let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
                if v.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    break v;
                }
            };
            GaussianPoint {
                position: p.map(|x| (x * radius) as f32),
                log_scale: [scale; 3],
                opacity_logit: logit(0.1) as f32,
                ambient_color: [0.3; 3],
                ..Default::default()
            }
        })
        .collect()
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationLog {
    pub stage: usize,
    pub iteration: usize,
    pub capture: usize,
    pub loss: LossBreakdown,
}

fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stage.index() as u64)))
}

fn write_checkpoint(cfg: &TrainConfig, params: &ParamSet, name: &str) -> Result<()> {
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&params.to_points(), &dir.join(name))?;
    }
    Ok(())
}

/// Runs stage 1 or 2: one random capture per iteration, shadow-free loss,
/// one Adam step. `offset` is the number of iterations already run in
/// earlier stages, for the position schedule.
pub fn train_stage(
    params: &mut ParamSet,
    dataset: &Dataset,
    cfg: &TrainConfig,
    stage: Stage,
    offset: usize,
) -> Result<Vec<IterationLog>> {
    if stage == Stage::Three {
        return Err(Error::invalid("stage 3 runs through meta_train"));
    }
    cfg.validate()?;
    let iterations = cfg.iterations[stage.index() - 1];
    if iterations > 0 && dataset.is_empty() {
        return Err(Error::invalid("training needs at least one capture"));
    }
    let mut rng = stage_rng(cfg.seed, stage);
    let mut adam = Adam::new(params.len(), cfg.rates);
    let mut mask = ParamSet::mask(params.num_points(), stage_attributes(stage));
    let mut stats = GradStats::new(params.num_points());
    let mut logs = Vec::with_capacity(iterations);
    let start = Instant::now();
    for it in 0..iterations {
        let idx = rng.gen_range(0..dataset.len());
        let capture = &dataset.captures[idx];
        let tape = Tape::new();
        let p = tape.leaf(params.values.clone());
        let loss = stage_loss(p, capture, stage, None, &cfg.weights, it, &cfg.render, &StopGrads::live())?;
        if !loss.terms.total.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                message: format!("stage {} loss is {}", stage.index(), loss.terms.total),
            });
        }
        let grad = tape.grad(loss.total, &[p])?[0].to_vec();
        adam.step(params, &grad, &mask, offset + it)?;
        logs.push(IterationLog {
            stage: stage.index(),
            iteration: it,
            capture: idx,
            loss: loss.terms,
        });
        if cfg.densify.enabled {
            stats.accumulate(&grad);
            if (it + 1) % cfg.densify.interval.max(1) == 0 && it + 1 < iterations {
                let (next, sources) = densify_and_prune(params, &stats, &cfg.densify);
                *params = next;
                adam.remap(&sources);
                mask = ParamSet::mask(params.num_points(), stage_attributes(stage));
                stats = GradStats::new(params.num_points());
            }
        }
        if cfg.log_interval > 0 && it % cfg.log_interval == 0 {
            log_line(stage.index(), it, &loss.terms, start);
        }
        if cfg.checkpoint_interval > 0 && it > 0 && it % cfg.checkpoint_interval == 0 {
            write_checkpoint(cfg, params, &format!("stage{}_{it:06}.phgs", stage.index()))?;
        }
    }
    write_checkpoint(cfg, params, &format!("stage{}_final.phgs", stage.index()))?;
    Ok(logs)
}

fn log_line(stage: usize, it: usize, t: &LossBreakdown, start: Instant) {
    log::info!(
        "stage {stage} iter {it:>6} loss {:.6} rgb {:.6} sparse {:.6} normal {:.6} smooth {:.6} diffuse {:.6} ({:.1}s)",
        t.total,
        t.rgb,
        t.sparse,
        t.normal,
        t.smooth,
        t.diffuse,
        start.elapsed().as_secs_f64()
    );
}

pub fn train_stage1(params: &mut ParamSet, dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<IterationLog>> {
    train_stage(params, dataset, cfg, Stage::One, 0)
}

pub fn train_stage2(params: &mut ParamSet, dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<IterationLog>> {
    train_stage(params, dataset, cfg, Stage::Two, cfg.iterations[0])
}

/// Losses used by [`meta_train`], indexed by capture.
pub trait MetaLosses: Sync {
    /// Shadow-free loss, used by inner phase A.
    fn phong<'t>(&self, params: Var<'t>, capture: usize, iteration: usize, stops: &StopGrads) -> Result<Var<'t>>;
    /// Shadowed loss, used by inner phase B and the outer objective.
    fn shadow<'t>(&self, params: Var<'t>, capture: usize, iteration: usize, stops: &StopGrads) -> Result<Var<'t>>;
    /// Hook called with the current parameters before iteration `iteration`.
    fn refresh(&mut self, _params: &ParamSet, _iteration: usize) {}
}

/// Stage-3 losses on a dataset, with a periodically rebuilt BVH.
pub struct SceneLosses<'a> {
    pub dataset: &'a Dataset,
    pub weights: LossWeights,
    pub render: RenderOptions,
    pub shadows: bool,
    pub rebuild_interval: usize,
    pub bvh: Option<Bvh>,
}

impl<'a> SceneLosses<'a> {
    pub fn new(dataset: &'a Dataset, cfg: &TrainConfig) -> Self {
        Self {
            dataset,
            weights: cfg.weights,
            render: cfg.render,
            shadows: cfg.shadows,
            rebuild_interval: cfg.bvh_rebuild_interval,
            bvh: None,
        }
    }

    fn loss<'t>(
        &self,
        params: Var<'t>,
        capture: usize,
        iteration: usize,
        shadow: bool,
        stops: &StopGrads,
    ) -> Result<Var<'t>> {
        let bvh = if shadow && self.shadows {
            Some(self.bvh.as_ref().ok_or_else(|| Error::invalid("BVH not built before use"))?)
        } else {
            None
        };
        let cap = &self.dataset.captures[capture];
        Ok(stage_loss(params, cap, Stage::Three, bvh, &self.weights, iteration, &self.render, stops)?.total)
    }
}

impl MetaLosses for SceneLosses<'_> {
    fn phong<'t>(&self, params: Var<'t>, capture: usize, iteration: usize, stops: &StopGrads) -> Result<Var<'t>> {
        self.loss(params, capture, iteration, false, stops)
    }

    fn shadow<'t>(&self, params: Var<'t>, capture: usize, iteration: usize, stops: &StopGrads) -> Result<Var<'t>> {
        self.loss(params, capture, iteration, true, stops)
    }

    fn refresh(&mut self, params: &ParamSet, iteration: usize) {
        if self.shadows && (self.bvh.is_none() || iteration % self.rebuild_interval.max(1) == 0) {
            self.bvh = Some(build_bvh_params(params));
        }
    }
}

/// One task draw of a meta-iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetaDraw {
    pub task: usize,
    pub support: usize,
    pub query: usize,
}

/// Draws `m` distinct tasks, ordered by id, with one support and one query
/// capture each.
pub fn sample_meta_batch(rng: &mut ChaCha8Rng, tasks: &[LightTask], m: usize) -> Vec<MetaDraw> {
    let mut ids: Vec<usize> = (0..tasks.len()).collect();
    ids.shuffle(rng);
    let mut chosen = ids[..m.min(tasks.len())].to_vec();
    chosen.sort_unstable();
    chosen
        .into_iter()
        .map(|t| MetaDraw {
            task: tasks[t].id,
            support: *tasks[t].support.choose(rng).expect("support sets are non-empty"),
            query: *tasks[t].query.choose(rng).expect("query sets are non-empty"),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MetaReport {
    /// Mean outer (query) loss per iteration, before the update.
    pub query_loss: Vec<f64>,
}

/// Settings of the two inner phases.
#[derive(Debug, Clone, Copy)]
pub struct InnerSchedule<'a> {
    pub lr_phong: f64,
    pub lr_shadow: f64,
    pub phong_mask: &'a [f64],
    pub shadow_mask: &'a [f64],
    pub first_order: bool,
}

fn with_task_steps<R>(
    losses: &dyn MetaLosses,
    draw: MetaDraw,
    iteration: usize,
    inner: &InnerSchedule<'_>,
    stops: &StopGrads,
    f: impl FnOnce(&dyn Loss, &[InnerStep<'_>]) -> Result<R>,
) -> Result<R> {
    let a = loss_fn(|_t, p| losses.phong(p, draw.support, iteration, stops));
    let b = loss_fn(|_t, p| losses.shadow(p, draw.support, iteration, stops));
    let outer = loss_fn(|_t, p| losses.shadow(p, draw.query, iteration, stops));
    let steps = [
        InnerStep {
            loss: &a,
            lr: inner.lr_phong,
            mask: inner.phong_mask,
        },
        InnerStep {
            loss: &b,
            lr: inner.lr_shadow,
            mask: inner.shadow_mask,
        },
    ];
    f(&outer, &steps)
}

/// Query loss after both inner steps and its gradient with respect to the
/// pre-adaptation parameters.
pub fn task_gradient(
    losses: &dyn MetaLosses,
    params: &[f64],
    draw: MetaDraw,
    iteration: usize,
    inner: &InnerSchedule<'_>,
    stops: &StopGrads,
) -> Result<(f64, Vec<f64>)> {
    with_task_steps(losses, draw, iteration, inner, stops, |outer, steps| {
        grad_through_inner_steps(outer, steps, params, inner.first_order)
    })
}

/// Value part of [`task_gradient`].
pub fn task_value(
    losses: &dyn MetaLosses,
    params: &[f64],
    draw: MetaDraw,
    iteration: usize,
    inner: &InnerSchedule<'_>,
    stops: &StopGrads,
) -> Result<f64> {
    with_task_steps(losses, draw, iteration, inner, stops, |outer, steps| {
        eval_through_inner_steps(outer, steps, params)
    })
}

/// Stage 3. Each iteration draws `tasks_per_iteration` tasks; per task the
/// Phong attributes take one gradient step on a support capture, then the
/// shadow coefficients take one on the same capture, and the adapted
/// parameters are scored on a query capture. The mean query loss is
/// differentiated through both inner steps and applied with Adam.
pub fn meta_train(
    params: &mut ParamSet,
    tasks: &[LightTask],
    losses: &mut dyn MetaLosses,
    cfg: &TrainConfig,
    offset: usize,
) -> Result<MetaReport> {
    cfg.validate()?;
    let iterations = cfg.iterations[2];
    let m = cfg.tasks_per_iteration;
    if iterations > 0 && tasks.len() < m {
        return Err(Error::invalid(format!(
            "meta-training draws {m} tasks per iteration but only {} exist",
            tasks.len()
        )));
    }
    let mut rng = stage_rng(cfg.seed, Stage::Three);
    let mut adam = Adam::new(params.len(), cfg.rates);
    let all = vec![1.0; params.len()];
    let mask_a = phong_mask(params.num_points());
    let mask_b = shadow_mask(params.num_points());
    let inner = InnerSchedule {
        lr_phong: cfg.inner_lr_phong,
        lr_shadow: cfg.inner_lr_shadow,
        phong_mask: &mask_a,
        shadow_mask: &mask_b,
        first_order: cfg.first_order,
    };
    let mut report = MetaReport::default();
    let start = Instant::now();
    for it in 0..iterations {
        losses.refresh(params, it);
        let draws = sample_meta_batch(&mut rng, tasks, m);
        let shared: &dyn MetaLosses = losses;
        let results: Vec<Result<(f64, Vec<f64>)>> = draws
            .par_iter()
            .map(|d| task_gradient(shared, &params.values, *d, it, &inner, &StopGrads::live()))
            .collect();
        let mut value = 0.0;
        let mut grad = vec![0.0; params.len()];
        for r in results {
            let (v, g) = r?;
            value += v;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / draws.len() as f64;
        value *= scale;
        grad.iter_mut().for_each(|g| *g *= scale);
        if !value.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                message: format!("outer loss is {value}"),
            });
        }
        adam.step(params, &grad, &all, offset + it)?;
        report.query_loss.push(value);
        if cfg.log_interval > 0 && it % cfg.log_interval == 0 {
            log::info!(
                "stage 3 iter {it:>6} query loss {value:.6} ({:.1}s)",
                start.elapsed().as_secs_f64()
            );
        }
        if cfg.checkpoint_interval > 0 && it > 0 && it % cfg.checkpoint_interval == 0 {
            write_checkpoint(cfg, params, &format!("stage3_{it:06}.phgs"))?;
        }
    }
    write_checkpoint(cfg, params, "stage3_final.phgs")?;
    Ok(report)
}

/// Everything a full run produced besides the parameters.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub stage1: Vec<IterationLog>,
    pub stage2: Vec<IterationLog>,
    pub tasks: Vec<LightTask>,
    pub meta: MetaReport,
}

/// Runs all three stages on `dataset`.
pub fn train_all(params: &mut ParamSet, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    let stage1 = train_stage1(params, dataset, cfg)?;
    let stage2 = train_stage2(params, dataset, cfg)?;
    initialize_stage3(params);
    let (tasks, meta) = run_stage3(params, dataset, cfg)?;
    Ok(TrainReport {
        stage1,
        stage2,
        tasks,
        meta,
    })
}

/// Partitions tasks and runs [`meta_train`] with scene losses.
pub fn run_stage3(params: &mut ParamSet, dataset: &Dataset, cfg: &TrainConfig) -> Result<(Vec<LightTask>, MetaReport)> {
    if cfg.iterations[2] == 0 {
        write_checkpoint(cfg, params, "stage3_final.phgs")?;
        return Ok((Vec::new(), MetaReport::default()));
    }
    let num_tasks = cfg.num_tasks.min(dataset.len());
    let tasks = partition_tasks(dataset, num_tasks, cfg.support_fraction, cfg.seed)?;
    let m = cfg.tasks_per_iteration.min(tasks.len());
    let cfg = TrainConfig {
        tasks_per_iteration: m,
        ..cfg.clone()
    };
    let mut losses = SceneLosses::new(dataset, &cfg);
    let report = meta_train(params, &tasks, &mut losses, &cfg, cfg.iterations[0] + cfg.iterations[1])?;
    Ok((tasks, report))
}
