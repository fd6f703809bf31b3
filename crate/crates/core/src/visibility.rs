//! Light visibility: transmittance from each Gaussian center to the light.
//!
//! A Gaussian occludes a shadow segment with its peak response along the
//! segment, `o · φ · exp(-m*/2)`, where `m*` is the smallest Mahalanobis
//! distance of any point on the ray. Only closest approaches strictly
//! between the source and the light, and within 3σ, count. The 3σ limit is
//! what makes the 3σ bounding boxes an exact acceleration structure.
//!
//! Segments start where they leave the source's own 3σ ellipsoid. Surface
//! Gaussians overlap their neighbours, and a segment starting at the bare
//! center would be shadowed by them (acne) on every lit surface.

use std::rc::Rc;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::autodiff::{ParamSet, Var};
use crate::error::{Error, Result};
use crate::model::{dot3, PointVars, V3};
use crate::scene::{quaternion_to_matrix, sigmoid, GaussianPoint, PointLight, ATTRIBUTE_COUNT};
use crate::shading::MIN_LIGHT_DISTANCE;

/// Margin keeping hits strictly between the source and the light.
pub const SEGMENT_EPS: f64 = 1e-4;
/// Segments start this many source standard deviations along the ray.
pub const SELF_SHADOW_SIGMAS: f64 = 3.0;
/// Squared Mahalanobis radius beyond which a Gaussian does not occlude.
pub const OCCLUDER_CUTOFF: f64 = 9.0;
pub const MAX_OCCLUDER_ALPHA: f64 = 0.999;
pub const MAX_LEAF_SIZE: usize = 4;
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: [f64::INFINITY; 3],
            max: [f64::NEG_INFINITY; 3],
        }
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: std::array::from_fn(|k| self.min[k].min(other.min[k])),
            max: std::array::from_fn(|k| self.max[k].max(other.max[k])),
        }
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && other.max[k] <= self.max[k])
    }

    /// Whether the segment `origin + t·dir`, `t ∈ [t0, t1]`, touches the box.
    pub fn hits_segment(&self, origin: &[f64; 3], inv_dir: &[f64; 3], t0: f64, t1: f64) -> bool {
        let (mut lo, mut hi) = (t0, t1);
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            let (a, b) = if a <= b { (a, b) } else { (b, a) };
            // NaN (origin on a slab plane with zero direction) keeps the slab open.
            if a > lo {
                lo = a;
            }
            if b < hi {
                hi = b;
            }
            if lo > hi {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Inner { left: usize, right: usize },
    /// Range into [`Bvh::leaf_ids`].
    Leaf { start: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvhNode {
    pub bounds: Aabb,
    pub kind: NodeKind,
}

/// Median-split bounding volume hierarchy over 3σ Gaussian boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Bvh {
    /// Root first.
    pub nodes: Vec<BvhNode>,
    pub leaf_ids: Vec<usize>,
    pub prim_bounds: Vec<Aabb>,
}

impl Bvh {
    pub fn depth(&self) -> usize {
        fn go(b: &Bvh, n: usize) -> usize {
            match b.nodes[n].kind {
                NodeKind::Leaf { .. } => 1,
                NodeKind::Inner { left, right } => 1 + go(b, left).max(go(b, right)),
            }
        }
        if self.nodes.is_empty() { 0 } else { go(self, 0) }
    }

    /// Ids whose boxes touch the segment, in traversal order.
    pub fn candidates(&self, origin: &[f64; 3], dir: &[f64; 3], t_max: f64) -> Vec<usize> {
        let inv: [f64; 3] = std::array::from_fn(|k| 1.0 / dir[k]);
        let mut out = Vec::new();
        if self.nodes.is_empty() {
            return out;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bounds.hits_segment(origin, &inv, 0.0, t_max) {
                continue;
            }
            match node.kind {
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
                NodeKind::Leaf { start, count } => {
                    for &id in &self.leaf_ids[start..start + count] {
                        if self.prim_bounds[id].hits_segment(origin, &inv, 0.0, t_max) {
                            out.push(id);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Box of the 3σ ellipsoid of record `p`: `μ_k ± 3·sqrt(Σ_kk)`.
pub fn gaussian_bounds(p: &[f64]) -> Aabb {
    let r = quaternion_to_matrix([p[3], p[4], p[5], p[6]]);
    let s2: [f64; 3] = std::array::from_fn(|j| (2.0 * p[7 + j]).exp());
    let half: [f64; 3] = std::array::from_fn(|k| 3.0 * (0..3).map(|j| r[(k, j)] * r[(k, j)] * s2[j]).sum::<f64>().sqrt());
    Aabb {
        min: std::array::from_fn(|k| p[k] - half[k]),
        max: std::array::from_fn(|k| p[k] + half[k]),
    }
}

/// Builds the hierarchy over all points of `params`.
pub fn build_bvh_params(params: &ParamSet) -> Bvh {
    let n = params.num_points();
    let prim_bounds: Vec<Aabb> = (0..n).map(|i| gaussian_bounds(params.point(i))).collect();
    let centers: Vec<[f64; 3]> = (0..n).map(|i| std::array::from_fn(|k| params.point(i)[k])).collect();
    let mut ids: Vec<usize> = (0..n).collect();
    let mut nodes = Vec::new();
    if n > 0 {
        build_node(&mut nodes, &mut ids, 0, n, &prim_bounds, &centers, 1);
    }
    Bvh {
        nodes,
        leaf_ids: ids,
        prim_bounds,
    }
}

pub fn build_bvh(points: &[GaussianPoint]) -> Bvh {
    build_bvh_params(&ParamSet::from_points(points))
}

fn build_node(
    nodes: &mut Vec<BvhNode>,
    ids: &mut [usize],
    start: usize,
    end: usize,
    bounds: &[Aabb],
    centers: &[[f64; 3]],
    depth: usize,
) -> usize {
    let slot = nodes.len();
    let bb = ids[start..end].iter().fold(Aabb::empty(), |b, &i| b.union(&bounds[i]));
    nodes.push(BvhNode {
        bounds: bb,
        kind: NodeKind::Leaf {
            start,
            count: end - start,
        },
    });
    if end - start <= MAX_LEAF_SIZE || depth >= MAX_DEPTH {
        return slot;
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &ids[start..end] {
        for k in 0..3 {
            lo[k] = lo[k].min(centers[i][k]);
            hi[k] = hi[k].max(centers[i][k]);
        }
    }
    let axis = (0..3).fold(0, |a, k| if hi[k] - lo[k] > hi[a] - lo[a] { k } else { a });
    ids[start..end].sort_by(|&a, &b| centers[a][axis].total_cmp(&centers[b][axis]).then(a.cmp(&b)));
    let mid = start + (end - start) / 2;
    let left = build_node(nodes, ids, start, mid, bounds, centers, depth + 1);
    let right = build_node(nodes, ids, mid, end, bounds, centers, depth + 1);
    nodes[slot].kind = NodeKind::Inner { left, right };
    slot
}

/// One occluder on a shadow segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub source: usize,
    pub occluder: usize,
    /// Closest-approach distance along the segment.
    pub t: f64,
    pub alpha: f64,
}

/// Closest approach of the ray `origin + t·dir` to Gaussian record `p`:
/// `(t*, m*)` with `m*` the squared Mahalanobis distance there.
fn closest_approach(p: &[f64], origin: &Vector3<f64>, dir: &Vector3<f64>) -> (f64, f64) {
    let r = quaternion_to_matrix([p[3], p[4], p[5], p[6]]);
    let e = origin - Vector3::new(p[0], p[1], p[2]);
    let (mut epe, mut dpe, mut dpd) = (0.0, 0.0, 0.0);
    for k in 0..3 {
        let inv_s2 = (-2.0 * p[7 + k]).exp();
        let y = r[(0, k)] * e[0] + r[(1, k)] * e[1] + r[(2, k)] * e[2];
        let z = r[(0, k)] * dir[0] + r[(1, k)] * dir[1] + r[(2, k)] * dir[2];
        epe += y * y * inv_s2;
        dpe += y * z * inv_s2;
        dpd += z * z * inv_s2;
    }
    assert!(dpd > 0.0, "singular Gaussian precision");
    (-dpe / dpd, epe - dpe * dpe / dpd)
}

/// Along-ray alpha of record `p` for the segment `t_min < t < t_max`, with
/// the closest-approach distance; `None` if it does not occlude.
pub fn ray_alpha_params(p: &[f64], origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64, t_max: f64) -> Option<(f64, f64)> {
    let (t, m) = closest_approach(p, origin, dir);
    if !(t > t_min.max(SEGMENT_EPS) && t < t_max - SEGMENT_EPS && m <= OCCLUDER_CUTOFF) {
        return None;
    }
    let strength = sigmoid(p[10]) * sigmoid(p[24]);
    Some((t, (strength * (-0.5 * m).exp()).min(MAX_OCCLUDER_ALPHA)))
}

/// Along-ray alpha of `point` for the ray `origin + t·dir`, `0 < t < t_max`.
pub fn ray_gaussian_alpha(point: &GaussianPoint, origin: &Vector3<f64>, dir: &Vector3<f64>, t_max: f64) -> f64 {
    ray_alpha_params(&point.to_array().map(f64::from), origin, dir, 0.0, t_max).map_or(0.0, |(_, a)| a)
}

/// Distance along unit `dir` from the center of record `p` to the surface
/// of its `SELF_SHADOW_SIGMAS` ellipsoid.
pub fn self_shadow_offset(p: &[f64], dir: &Vector3<f64>) -> f64 {
    let r = quaternion_to_matrix([p[3], p[4], p[5], p[6]]);
    let dpd: f64 = (0..3)
        .map(|k| {
            let z = r[(0, k)] * dir[0] + r[(1, k)] * dir[1] + r[(2, k)] * dir[2];
            z * z * (-2.0 * p[7 + k]).exp()
        })
        .sum();
    SELF_SHADOW_SIGMAS / dpd.sqrt()
}

struct Segment {
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    start: f64,
    length: f64,
}

fn segment(params: &ParamSet, source: usize, light: &PointLight) -> Result<Segment> {
    let p = params.point(source);
    let origin = Vector3::new(p[0], p[1], p[2]);
    let to_light = light.position - origin;
    let length = to_light.norm();
    if !(length >= MIN_LIGHT_DISTANCE) {
        return Err(Error::LightCoincident);
    }
    let dir = to_light / length;
    Ok(Segment {
        origin,
        dir,
        start: self_shadow_offset(p, &dir),
        length,
    })
}

fn sorted_hits(params: &ParamSet, source: usize, light: &PointLight, candidates: impl Iterator<Item = usize>) -> Result<Vec<Hit>> {
    let s = segment(params, source, light)?;
    let mut hits: Vec<Hit> = candidates
        .filter(|&j| j != source)
        .filter_map(|j| {
            ray_alpha_params(params.point(j), &s.origin, &s.dir, s.start, s.length).map(|(t, alpha)| Hit {
                source,
                occluder: j,
                t,
                alpha,
            })
        })
        .collect();
    hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.occluder.cmp(&b.occluder)));
    Ok(hits)
}

/// Occluders between point `source` and the light, ordered by `(t, id)`.
pub fn segment_hits(bvh: &Bvh, params: &ParamSet, source: usize, light: &PointLight) -> Result<Vec<Hit>> {
    let s = segment(params, source, light)?;
    let cands = bvh.candidates(&s.origin.into(), &s.dir.into(), s.length);
    sorted_hits(params, source, light, cands.into_iter())
}

fn product(hits: &[Hit]) -> f64 {
    hits.iter().fold(1.0, |t, h| t * (1.0 - h.alpha))
}

/// Transmittance from point `source` to the light through the hierarchy.
pub fn light_transmittance(bvh: &Bvh, params: &ParamSet, source: usize, light: &PointLight) -> Result<f64> {
    Ok(product(&segment_hits(bvh, params, source, light)?))
}

/// Reference O(N) evaluation of [`light_transmittance`].
pub fn brute_force_transmittance(params: &ParamSet, source: usize, light: &PointLight) -> Result<f64> {
    Ok(product(&sorted_hits(params, source, light, 0..params.num_points())?))
}

/// Hit lists of every point, in parallel.
pub fn all_hits(bvh: &Bvh, params: &ParamSet, light: &PointLight) -> Result<Vec<Vec<Hit>>> {
    (0..params.num_points())
        .into_par_iter()
        .map(|i| segment_hits(bvh, params, i, light))
        .collect()
}

/// Transmittance of every point.
pub fn transmittance_all(bvh: &Bvh, params: &ParamSet, light: &PointLight) -> Result<Vec<f64>> {
    Ok(all_hits(bvh, params, light)?.iter().map(|h| product(h)).collect())
}

/// Differentiable transmittance of every point of `params` (one entry per
/// point). The hit set is chosen from forward values through `bvh`; the
/// alphas of those hits, including the dependence on the source position,
/// are recorded on the tape.
pub fn transmittance_tape<'t>(params: Var<'t>, bvh: &Bvh, light: &PointLight) -> Result<Var<'t>> {
    let n = params.len() / ATTRIBUTE_COUNT;
    let values = ParamSet {
        values: params.value().to_vec(),
    };
    let hits: Vec<Hit> = all_hits(bvh, &values, light)?.into_iter().flatten().collect();
    if hits.is_empty() {
        return Ok(params.tape().constant(vec![1.0; n]));
    }
    let src: Rc<[usize]> = hits.iter().map(|h| h.source).collect::<Vec<_>>().into();
    let occ: Rc<[usize]> = hits.iter().map(|h| h.occluder).collect::<Vec<_>>().into();
    let s = PointVars::subset(params, src.clone());
    let o = PointVars::subset(params, occ);

    let to_light: V3<'t> = std::array::from_fn(|k| light.position[k] - s.position[k]);
    let dist = dot3(&to_light, &to_light).sqrt();
    let dir: V3<'t> = to_light.map(|c| c / dist);
    let e: V3<'t> = std::array::from_fn(|k| s.position[k] - o.position[k]);
    let mut epe = None;
    let mut dpe = None;
    let mut dpd = None;
    for k in 0..3 {
        let inv_s2 = (o.log_scale[k] * -2.0).exp();
        let y = o.rot[0][k] * e[0] + o.rot[1][k] * e[1] + o.rot[2][k] * e[2];
        let z = o.rot[0][k] * dir[0] + o.rot[1][k] * dir[1] + o.rot[2][k] * dir[2];
        let acc = |a: Option<Var<'t>>, v: Var<'t>| Some(a.map_or(v, |a| a + v));
        epe = acc(epe, y * y * inv_s2);
        dpe = acc(dpe, y * z * inv_s2);
        dpd = acc(dpd, z * z * inv_s2);
    }
    let (epe, dpe, dpd) = (epe.unwrap(), dpe.unwrap(), dpd.unwrap());
    let m = epe - dpe * dpe / dpd;
    let alpha = (o.opacity * o.shadow * (m * -0.5).exp()).min_const(MAX_OCCLUDER_ALPHA);
    Ok((1.0 - alpha).scatter_prod(src, n))
}
