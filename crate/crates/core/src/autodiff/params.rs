//! Flat parameter vector over all Gaussians.

use std::rc::Rc;

use crate::scene::{GaussianPoint, ATTRIBUTE_COUNT};

/// Attribute groups of a [`GaussianPoint`], in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attr {
    Position,
    Rotation,
    LogScale,
    Opacity,
    Ambient,
    NormalOut,
    NormalIn,
    Diffuse,
    Specular,
    Shadow,
}

impl Attr {
    pub const ALL: [Attr; 10] = [
        Attr::Position,
        Attr::Rotation,
        Attr::LogScale,
        Attr::Opacity,
        Attr::Ambient,
        Attr::NormalOut,
        Attr::NormalIn,
        Attr::Diffuse,
        Attr::Specular,
        Attr::Shadow,
    ];

    /// Offset of the first component inside a point record.
    pub const fn offset(self) -> usize {
        match self {
            Attr::Position => 0,
            Attr::Rotation => 3,
            Attr::LogScale => 7,
            Attr::Opacity => 10,
            Attr::Ambient => 11,
            Attr::NormalOut => 14,
            Attr::NormalIn => 17,
            Attr::Diffuse => 20,
            Attr::Specular => 23,
            Attr::Shadow => 24,
        }
    }

    pub const fn len(self) -> usize {
        match self {
            Attr::Rotation => 4,
            Attr::Opacity | Attr::Specular | Attr::Shadow => 1,
            _ => 3,
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            Attr::Position => "position",
            Attr::Rotation => "rotation",
            Attr::LogScale => "log_scale",
            Attr::Opacity => "opacity_logit",
            Attr::Ambient => "ambient_color",
            Attr::NormalOut => "normal_residual_out",
            Attr::NormalIn => "normal_residual_in",
            Attr::Diffuse => "diffuse_color",
            Attr::Specular => "specular_coeff",
            Attr::Shadow => "shadow_coeff_logit",
        }
    }

    /// Attribute owning record slot `slot`.
    pub fn of_slot(slot: usize) -> Attr {
        assert!(slot < ATTRIBUTE_COUNT);
        *Attr::ALL
            .iter()
            .rev()
            .find(|a| a.offset() <= slot)
            .expect("slot 0 belongs to position")
    }
}

/// All learnable scalars, point-major: point `i` occupies
/// `i * ATTRIBUTE_COUNT .. (i + 1) * ATTRIBUTE_COUNT`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub values: Vec<f64>,
}

impl ParamSet {
    pub fn from_points(points: &[GaussianPoint]) -> Self {
        Self {
            values: points
                .iter()
                .flat_map(|p| p.to_array().map(f64::from))
                .collect(),
        }
    }

    pub fn to_points(&self) -> Vec<GaussianPoint> {
        self.values
            .chunks_exact(ATTRIBUTE_COUNT)
            .map(|c| GaussianPoint::from_array(&std::array::from_fn(|k| c[k] as f32)))
            .collect()
    }

    pub fn num_points(&self) -> usize {
        self.values.len() / ATTRIBUTE_COUNT
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(point: usize, attr: Attr, component: usize) -> usize {
        debug_assert!(component < attr.len());
        point * ATTRIBUTE_COUNT + attr.offset() + component
    }

    /// Inverse of [`ParamSet::index`].
    pub fn locate(flat: usize) -> (usize, Attr, usize) {
        let point = flat / ATTRIBUTE_COUNT;
        let slot = flat % ATTRIBUTE_COUNT;
        let attr = Attr::of_slot(slot);
        (point, attr, slot - attr.offset())
    }

    /// The full record of one point.
    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * ATTRIBUTE_COUNT..(i + 1) * ATTRIBUTE_COUNT]
    }

    pub fn get(&self, point: usize, attr: Attr) -> &[f64] {
        let i = Self::index(point, attr, 0);
        &self.values[i..i + attr.len()]
    }

    pub fn get_mut(&mut self, point: usize, attr: Attr) -> &mut [f64] {
        let i = Self::index(point, attr, 0);
        &mut self.values[i..i + attr.len()]
    }

    /// 1 on every coordinate of the listed attributes, 0 elsewhere.
    pub fn mask(num_points: usize, attrs: &[Attr]) -> Vec<f64> {
        let mut m = vec![0.0; num_points * ATTRIBUTE_COUNT];
        for i in 0..num_points {
            for a in attrs {
                for c in 0..a.len() {
                    m[Self::index(i, *a, c)] = 1.0;
                }
            }
        }
        m
    }

    /// Human-readable coordinate name, e.g. `point 3 rotation[1]`.
    pub fn describe(flat: usize) -> String {
        let (p, a, c) = Self::locate(flat);
        format!("point {p} {}[{c}]", a.name())
    }
}

/// Cached gather indices selecting one record slot from every point.
#[derive(Debug, Clone)]
pub struct Layout {
    pub num_points: usize,
    columns: Vec<Rc<[usize]>>,
}

impl Layout {
    pub fn new(num_points: usize) -> Self {
        let columns = (0..ATTRIBUTE_COUNT)
            .map(|slot| {
                (0..num_points)
                    .map(|i| i * ATTRIBUTE_COUNT + slot)
                    .collect::<Vec<_>>()
                    .into()
            })
            .collect();
        Self {
            num_points,
            columns,
        }
    }

    pub fn column(&self, attr: Attr, component: usize) -> Rc<[usize]> {
        assert!(component < attr.len());
        self.columns[attr.offset() + component].clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_map_is_a_bijection() {
        let n = 7;
        let mut seen = vec![false; n * ATTRIBUTE_COUNT];
        for p in 0..n {
            for a in Attr::ALL {
                for c in 0..a.len() {
                    let i = ParamSet::index(p, a, c);
                    assert!(!seen[i]);
                    seen[i] = true;
                    assert_eq!(ParamSet::locate(i), (p, a, c));
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn attribute_table_covers_record() {
        let total: usize = Attr::ALL.iter().map(|a| a.len()).sum();
        assert_eq!(total, ATTRIBUTE_COUNT);
        let mut expected = 0;
        for a in Attr::ALL {
            assert_eq!(a.offset(), expected);
            expected += a.len();
        }
    }

    #[test]
    fn points_round_trip() {
        let mut p = GaussianPoint::default();
        p.diffuse_color = [0.1, 0.2, 0.3];
        p.shadow_coeff_logit = 2.0;
        let ps = ParamSet::from_points(&[p, GaussianPoint::default()]);
        assert_eq!(ps.len(), 2 * ATTRIBUTE_COUNT);
        assert_eq!(ps.get(0, Attr::Shadow), &[2.0]);
        assert_eq!(ps.to_points(), vec![p, GaussianPoint::default()]);
        assert_eq!(ParamSet::describe(ATTRIBUTE_COUNT + 4), "point 1 rotation[1]");
    }
}
