//! Per-Gaussian attributes as tape vectors (one entry per point).

use std::rc::Rc;

use crate::autodiff::{Attr, Tape, Var};
use crate::scene::ATTRIBUTE_COUNT;

pub type V3<'t> = [Var<'t>; 3];

pub fn dot3<'t>(a: &V3<'t>, b: &V3<'t>) -> Var<'t> {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn add3<'t>(a: &V3<'t>, b: &V3<'t>) -> V3<'t> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3<'t>(a: &V3<'t>, b: &V3<'t>) -> V3<'t> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn mul3<'t>(a: &V3<'t>, s: Var<'t>) -> V3<'t> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn div3<'t>(a: &V3<'t>, s: Var<'t>) -> V3<'t> {
    [a[0] / s, a[1] / s, a[2] / s]
}

pub fn norm3<'t>(a: &V3<'t>) -> Var<'t> {
    dot3(a, a).sqrt()
}

pub fn normalize3<'t>(a: &V3<'t>) -> V3<'t> {
    div3(a, norm3(a))
}

pub fn gather3<'t>(a: &V3<'t>, idx: &Rc<[usize]>) -> V3<'t> {
    [a[0].gather(idx.clone()), a[1].gather(idx.clone()), a[2].gather(idx.clone())]
}

/// `Σ_k c_k · x_k` with constant coefficients; zero coefficients are skipped.
pub fn lincomb<'t>(terms: &[(Var<'t>, f64)]) -> Option<Var<'t>> {
    terms
        .iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|&(v, c)| if c == 1.0 { v } else { v * c })
        .reduce(|a, b| a + b)
}

/// Attributes of a subset of Gaussians, gathered from a flat parameter var.
pub struct PointVars<'t> {
    /// Global point ids, in the order of every vector below.
    pub ids: Rc<[usize]>,
    pub position: V3<'t>,
    /// Rotation matrix entries `r[i][j]` of the normalized quaternion.
    pub rot: [V3<'t>; 3],
    pub log_scale: V3<'t>,
    pub scale: V3<'t>,
    pub opacity: Var<'t>,
    pub ambient: V3<'t>,
    pub normal_out: V3<'t>,
    pub normal_in: V3<'t>,
    pub diffuse: V3<'t>,
    pub specular: Var<'t>,
    pub shadow: Var<'t>,
}

impl<'t> PointVars<'t> {
    pub fn all(params: Var<'t>) -> Self {
        let n = params.len() / ATTRIBUTE_COUNT;
        Self::subset(params, (0..n).collect::<Vec<_>>().into())
    }

    pub fn subset(params: Var<'t>, ids: Rc<[usize]>) -> Self {
        let col = |attr: Attr, c: usize| -> Var<'t> {
            let idx: Rc<[usize]> = ids
                .iter()
                .map(|&i| i * ATTRIBUTE_COUNT + attr.offset() + c)
                .collect::<Vec<_>>()
                .into();
            params.gather(idx)
        };
        let v3 = |attr: Attr| [col(attr, 0), col(attr, 1), col(attr, 2)];
        let q = [
            col(Attr::Rotation, 0),
            col(Attr::Rotation, 1),
            col(Attr::Rotation, 2),
            col(Attr::Rotation, 3),
        ];
        let log_scale = v3(Attr::LogScale);
        Self {
            position: v3(Attr::Position),
            rot: rotation_entries(q),
            scale: [log_scale[0].exp(), log_scale[1].exp(), log_scale[2].exp()],
            log_scale,
            opacity: col(Attr::Opacity, 0).sigmoid(),
            ambient: v3(Attr::Ambient),
            normal_out: v3(Attr::NormalOut),
            normal_in: v3(Attr::NormalIn),
            diffuse: v3(Attr::Diffuse),
            specular: col(Attr::Specular, 0),
            shadow: col(Attr::Shadow, 0).sigmoid(),
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn tape(&self) -> &'t Tape {
        self.opacity.tape()
    }

    /// World covariance entries `(xx, xy, xz, yy, yz, zz)`.
    pub fn covariance(&self) -> [Var<'t>; 6] {
        let m: [V3<'t>; 3] =
            std::array::from_fn(|i| std::array::from_fn(|j| self.rot[i][j] * self.scale[j]));
        let e = |i: usize, j: usize| dot3(&m[i], &m[j]);
        [e(0, 0), e(0, 1), e(0, 2), e(1, 1), e(1, 2), e(2, 2)]
    }

    /// Column `axis[i]` of point `i`'s rotation, selected with constant masks.
    pub fn axis_column(&self, axis: &[usize]) -> V3<'t> {
        let tape = self.tape();
        let masks: [Var<'t>; 3] = std::array::from_fn(|k| {
            tape.constant(axis.iter().map(|&a| if a == k { 1.0 } else { 0.0 }).collect())
        });
        std::array::from_fn(|i| {
            self.rot[i][0] * masks[0] + self.rot[i][1] * masks[1] + self.rot[i][2] * masks[2]
        })
    }

    /// Per-point index of the smallest scale, ties to the lowest axis.
    pub fn shortest_axes(&self) -> Vec<usize> {
        let ls: [Rc<Vec<f64>>; 3] = std::array::from_fn(|k| self.log_scale[k].value());
        (0..self.len())
            .map(|i| crate::scene::argmin3([ls[0][i], ls[1][i], ls[2][i]]))
            .collect()
    }
}

/// Rotation matrix entries of quaternions `(w, x, y, z)`, normalized first.
fn rotation_entries<'t>(q: [Var<'t>; 4]) -> [V3<'t>; 3] {
    let norm = (q[0].square() + q[1].square() + q[2].square() + q[3].square()).sqrt();
    let [w, x, y, z] = q.map(|c| c / norm);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, xz, yz) = (x * y, x * z, y * z);
    let (wx, wy, wz) = (w * x, w * y, w * z);
    [
        [1.0 - (yy + zz) * 2.0, (xy - wz) * 2.0, (xz + wy) * 2.0],
        [(xy + wz) * 2.0, 1.0 - (xx + zz) * 2.0, (yz - wx) * 2.0],
        [(xz - wy) * 2.0, (yz + wx) * 2.0, 1.0 - (xx + yy) * 2.0],
    ]
}
