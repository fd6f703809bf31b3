//! Reverse-mode tape over `f64` vectors.
//!
//! Every node holds a vector value. Binary elementwise ops broadcast a
//! length-1 operand. The backward pass does not compute numbers directly: it
//! appends the adjoint computation to the same tape as ordinary nodes, so the
//! resulting gradients are themselves differentiable. That is what makes a
//! gradient step inside a loss (and its second-order derivative) expressible.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Separable blur with edge-replicate padding over an interleaved
/// `height × width × channels` image.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Odd-length, normalized 1D taps applied along both axes.
    pub taps: Vec<f64>,
}

impl BlurKernel {
    /// Normalized Gaussian of `size` taps and standard deviation `sigma`.
    pub fn gaussian(width: usize, height: usize, channels: usize, size: usize, sigma: f64) -> Self {
        assert!(size % 2 == 1, "blur size must be odd");
        let r = (size / 2) as f64;
        let mut taps: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let total: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= total);
        Self {
            width,
            height,
            channels,
            taps,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        let h = self.pass(input, Axis::X, false);
        self.pass(&h, Axis::Y, false)
    }

    fn apply_transpose(&self, input: &[f64]) -> Vec<f64> {
        let v = self.pass(input, Axis::Y, true);
        self.pass(&v, Axis::X, true)
    }

    /// One 1D pass with replicate padding, run line by line through a padded
    /// scratch buffer. The transpose scatters into the padding and folds it
    /// back onto the edge samples.
    fn pass(&self, input: &[f64], axis: Axis, transpose: bool) -> Vec<f64> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let r = self.taps.len() / 2;
        let (n, stride, lines, line_step) = match axis {
            Axis::X => (w, c, h, w * c),
            Axis::Y => (h, w * c, w, c),
        };
        let mut out = vec![0.0; input.len()];
        let mut pad = vec![0.0; n + 2 * r];
        let edge = |j: usize| j.saturating_sub(r).min(n - 1);
        for line in 0..lines {
            for ch in 0..c {
                let start = line * line_step + ch;
                if transpose {
                    pad.fill(0.0);
                    for i in 0..n {
                        let v = input[start + i * stride];
                        for (p, &tap) in pad[i..i + 2 * r + 1].iter_mut().zip(&self.taps) {
                            *p += tap * v;
                        }
                    }
                    for (j, &p) in pad.iter().enumerate() {
                        out[start + edge(j) * stride] += p;
                    }
                } else {
                    for (j, p) in pad.iter_mut().enumerate() {
                        *p = input[start + edge(j) * stride];
                    }
                    for i in 0..n {
                        let mut acc = 0.0;
                        for (&p, &tap) in pad[i..i + 2 * r + 1].iter().zip(&self.taps) {
                            acc += tap * p;
                        }
                        out[start + i * stride] = acc;
                    }
                }
            }
        }
        out
    }
}

/// Branch-free finiteness scan: `x - x` is NaN exactly for non-finite `x`,
/// and independent lanes let the sum vectorize.
fn all_finite(v: &[f64]) -> bool {
    let mut lanes = [0.0f64; 8];
    let chunks = v.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().map(|x| x - x).sum();
    for c in chunks {
        for (l, x) in lanes.iter_mut().zip(c) {
            *l += x - x;
        }
    }
    lanes.iter().sum::<f64>() + tail == 0.0
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

type Index = Rc<[usize]>;

#[derive(Clone)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    /// `a * scale + shift`; only the scale matters for the adjoint.
    Affine(usize, f64),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Powf(usize, f64),
    Sigmoid(usize),
    Abs(usize),
    /// `min(max(a, lo), hi)`; zero derivative outside the open interval.
    Clamp(usize, f64, f64),
    Sum(usize),
    Broadcast(usize),
    Gather(usize, Index),
    ScatterAdd(usize, Index),
    ScatterProd(usize, Index),
    /// Exclusive running product within contiguous segments.
    SegCumProd(usize, Index),
    /// Exclusive running sum within contiguous segments.
    SegCumSum(usize, Index),
    /// Exclusive running sum from the end of each segment.
    SegRevCumSum(usize, Index),
    Blur(usize, Rc<BlurKernel>, bool),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Const => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Affine(..) => "affine",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sqrt(_) => "sqrt",
            Op::Powf(..) => "pow",
            Op::Sigmoid(_) => "sigmoid",
            Op::Abs(_) => "abs",
            Op::Clamp(..) => "clamp",
            Op::Sum(_) => "sum",
            Op::Broadcast(_) => "broadcast",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::ScatterProd(..) => "scatter_prod",
            Op::SegCumProd(..) => "segment_cumprod",
            Op::SegCumSum(..) => "segment_cumsum",
            Op::SegRevCumSum(..) => "segment_rev_cumsum",
            Op::Blur(..) => "blur",
        }
    }
}

struct Node {
    value: Rc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of vector operations.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    in_backward: Cell<bool>,
    non_finite: Cell<Option<(&'static str, &'static str)>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.len()).finish()
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, &self.value()[..self.len().min(4)])
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            in_backward: Cell::new(false),
            non_finite: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        if self.non_finite.get().is_none() && !all_finite(&value) {
            let phase = if self.in_backward.get() {
                "backward"
            } else {
                "forward"
            };
            self.non_finite.set(Some((op.name(), phase)));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Vec<f64>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Vec<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&self, value: Vec<f64>) -> Var<'_> {
        self.push(value, Op::Const, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(vec![value])
    }

    pub fn zeros(&self, len: usize) -> Var<'_> {
        self.constant(vec![0.0; len])
    }

    /// Fails if any node produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite.get() {
            Some((op, phase)) => Err(Error::NonFinite { op, phase }),
            None => Ok(()),
        }
    }

    /// Gradients of the scalar `root` with respect to each of `wrt`.
    ///
    /// The adjoint computation is recorded on this tape, so the returned
    /// vars can be differentiated again. Each node between the earliest
    /// `wrt` var and `root` is visited once.
    pub fn grad<'t>(&'t self, root: Var<'t>, wrt: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        if root.len() != 1 {
            return Err(Error::invalid(format!(
                "gradient root must be a scalar, got length {}",
                root.len()
            )));
        }
        self.check_finite()?;
        let Some(stop) = wrt.iter().map(|v| v.id).min() else {
            return Ok(Vec::new());
        };
        let was_backward = self.in_backward.replace(true);
        let mut adjoint: Vec<Option<Var<'t>>> = vec![None; root.id + 1];
        if stop <= root.id {
            adjoint[root.id] = Some(self.scalar(1.0));
        }
        for id in (stop..=root.id).rev() {
            let Some(g) = adjoint[id] else { continue };
            let op = {
                let nodes = self.nodes.borrow();
                if !nodes[id].requires_grad {
                    continue;
                }
                nodes[id].op.clone()
            };
            for (input, contribution) in self.vjp(&op, id, g) {
                if input < stop || !self.requires(input) {
                    continue;
                }
                adjoint[input] = Some(match adjoint[input] {
                    Some(acc) => acc + contribution,
                    None => contribution,
                });
            }
        }
        self.in_backward.set(was_backward);
        let grads = wrt
            .iter()
            .map(|v| match adjoint.get(v.id).copied().flatten() {
                Some(g) => g,
                None => self.zeros(v.len()),
            })
            .collect();
        self.check_finite()?;
        Ok(grads)
    }

    fn var(&self, id: usize) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Local vector-Jacobian products, expressed as tape ops.
    fn vjp<'t>(&'t self, op: &Op, id: usize, g: Var<'t>) -> Vec<(usize, Var<'t>)> {
        let out = self.var(id);
        let v = |i: usize| self.var(i);
        match op {
            Op::Leaf | Op::Const => vec![],
            Op::Add(a, b) => vec![(*a, g.unbroadcast(v(*a).len())), (*b, g.unbroadcast(v(*b).len()))],
            Op::Sub(a, b) => vec![
                (*a, g.unbroadcast(v(*a).len())),
                (*b, (-g).unbroadcast(v(*b).len())),
            ],
            Op::Mul(a, b) => {
                let mut r = Vec::with_capacity(2);
                if self.requires(*a) {
                    r.push((*a, (g * v(*b)).unbroadcast(v(*a).len())));
                }
                if self.requires(*b) {
                    r.push((*b, (g * v(*a)).unbroadcast(v(*b).len())));
                }
                r
            }
            Op::Div(a, b) => {
                let mut r = Vec::with_capacity(2);
                if self.requires(*a) {
                    r.push((*a, (g / v(*b)).unbroadcast(v(*a).len())));
                }
                if self.requires(*b) {
                    r.push((*b, (-(g * out) / v(*b)).unbroadcast(v(*b).len())));
                }
                r
            }
            Op::Affine(a, scale) => vec![(*a, g * *scale)],
            Op::Exp(a) => vec![(*a, g * out)],
            Op::Log(a) => vec![(*a, g / v(*a))],
            Op::Sqrt(a) => vec![(*a, g / (out * 2.0))],
            Op::Powf(a, p) => vec![(*a, g * v(*a).powf(p - 1.0) * *p)],
            Op::Sigmoid(a) => vec![(*a, g * out * (1.0 - out))],
            Op::Abs(a) => {
                let sign: Vec<f64> = v(*a)
                    .value()
                    .iter()
                    .map(|&x| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
                    .collect();
                vec![(*a, g * self.constant(sign))]
            }
            Op::Clamp(a, lo, hi) => {
                let mask: Vec<f64> = v(*a)
                    .value()
                    .iter()
                    .map(|&x| if x > *lo && x < *hi { 1.0 } else { 0.0 })
                    .collect();
                vec![(*a, g * self.constant(mask))]
            }
            Op::Sum(a) => vec![(*a, g.broadcast(v(*a).len()))],
            Op::Broadcast(a) => vec![(*a, g.sum())],
            Op::Gather(a, idx) => vec![(*a, g.scatter_add(idx.clone(), v(*a).len()))],
            Op::ScatterAdd(a, idx) => vec![(*a, g.gather(idx.clone()))],
            Op::ScatterProd(a, idx) => vec![(*a, (g * out).gather(idx.clone()) / v(*a))],
            Op::SegCumProd(a, off) => vec![(*a, (g * out).seg_rev_cumsum_excl(off.clone()) / v(*a))],
            Op::SegCumSum(a, off) => vec![(*a, g.seg_rev_cumsum_excl(off.clone()))],
            Op::SegRevCumSum(a, off) => vec![(*a, g.seg_cumsum_excl(off.clone()))],
            Op::Blur(a, kernel, transpose) => vec![(*a, g.blur_impl(kernel.clone(), !transpose))],
        }
    }
}

fn broadcast_len(a: usize, b: usize) -> usize {
    if a == b || b == 1 {
        a
    } else if a == 1 {
        b
    } else {
        panic!("length mismatch in elementwise op: {a} vs {b}")
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let n = broadcast_len(a.len(), b.len());
    match (a.len(), b.len()) {
        (x, y) if x == y => a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        (1, _) => b.iter().map(|&y| f(a[0], y)).collect(),
        _ => {
            debug_assert_eq!(b.len(), 1);
            let _ = n;
            a.iter().map(|&x| f(x, b[0])).collect()
        }
    }
}

fn offsets_check(off: &[usize], len: usize) {
    assert!(
        !off.is_empty() && off[0] == 0 && *off.last().unwrap() == len,
        "segment offsets must start at 0 and end at the vector length"
    );
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self) -> Rc<Vec<f64>> {
        self.tape.value_of(self.id)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().to_vec()
    }

    /// Value of a length-1 var.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a vector of length {}", v.len());
        v[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires(self.id)
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let value: Vec<f64> = self.value().iter().map(|&x| f(x)).collect();
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, op: Op, f: impl Fn(f64, f64) -> f64) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let value = zip_with(&self.value(), &other.value(), f);
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    pub fn affine(self, scale: f64, shift: f64) -> Var<'t> {
        self.unary(Op::Affine(self.id, scale), |x| x * scale + shift)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Log(self.id), f64::ln)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.unary(Op::Sqrt(self.id), f64::sqrt)
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        self.unary(Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| 1.0 / (1.0 + (-x).exp()))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    /// `max(0, x)` with derivative 0 at 0.
    pub fn relu(self) -> Var<'t> {
        self.clamp(0.0, f64::INFINITY)
    }

    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.unary(Op::Clamp(self.id, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn min_const(self, hi: f64) -> Var<'t> {
        self.clamp(f64::NEG_INFINITY, hi)
    }

    pub fn max_const(self, lo: f64) -> Var<'t> {
        self.clamp(lo, f64::INFINITY)
    }

    /// Sum of all elements, computed by pairwise reduction.
    pub fn sum(self) -> Var<'t> {
        let s = pairwise_sum(&self.value());
        let rg = self.requires_grad();
        self.tape.push(vec![s], Op::Sum(self.id), rg)
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.len();
        if n == 0 {
            return self.tape.scalar(0.0);
        }
        self.sum() * (1.0 / n as f64)
    }

    pub fn broadcast(self, n: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.len(), 1, "broadcast expects a scalar");
        let rg = self.requires_grad();
        self.tape.push(vec![v[0]; n], Op::Broadcast(self.id), rg)
    }

    fn unbroadcast(self, target: usize) -> Var<'t> {
        if self.len() == target {
            self
        } else {
            assert_eq!(target, 1, "cannot unbroadcast length {} to {}", self.len(), target);
            self.sum()
        }
    }

    /// `out[k] = self[idx[k]]`.
    pub fn gather(self, idx: Rc<[usize]>) -> Var<'t> {
        let v = self.value();
        let value = idx.iter().map(|&i| v[i]).collect();
        let rg = self.requires_grad();
        self.tape.push(value, Op::Gather(self.id, idx), rg)
    }

    /// `out[idx[k]] += self[k]` into a zero vector of length `n`.
    pub fn scatter_add(self, idx: Rc<[usize]>, n: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.len(), idx.len(), "scatter_add index length");
        let mut value = vec![0.0; n];
        for (&i, &x) in idx.iter().zip(v.iter()) {
            value[i] += x;
        }
        let rg = self.requires_grad();
        self.tape.push(value, Op::ScatterAdd(self.id, idx), rg)
    }

    /// `out[idx[k]] *= self[k]` into a vector of ones of length `n`.
    pub fn scatter_prod(self, idx: Rc<[usize]>, n: usize) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.len(), idx.len(), "scatter_prod index length");
        let mut value = vec![1.0; n];
        for (&i, &x) in idx.iter().zip(v.iter()) {
            value[i] *= x;
        }
        let rg = self.requires_grad();
        self.tape.push(value, Op::ScatterProd(self.id, idx), rg)
    }

    /// Exclusive running product inside each segment `offsets[s]..offsets[s+1]`.
    pub fn seg_cumprod_excl(self, offsets: Rc<[usize]>) -> Var<'t> {
        let v = self.value();
        offsets_check(&offsets, v.len());
        let mut value = vec![0.0; v.len()];
        for w in offsets.windows(2) {
            let mut acc = 1.0;
            for k in w[0]..w[1] {
                value[k] = acc;
                acc *= v[k];
            }
        }
        let rg = self.requires_grad();
        self.tape.push(value, Op::SegCumProd(self.id, offsets), rg)
    }

    pub fn seg_cumsum_excl(self, offsets: Rc<[usize]>) -> Var<'t> {
        let v = self.value();
        offsets_check(&offsets, v.len());
        let mut value = vec![0.0; v.len()];
        for w in offsets.windows(2) {
            let mut acc = 0.0;
            for k in w[0]..w[1] {
                value[k] = acc;
                acc += v[k];
            }
        }
        let rg = self.requires_grad();
        self.tape.push(value, Op::SegCumSum(self.id, offsets), rg)
    }

    pub fn seg_rev_cumsum_excl(self, offsets: Rc<[usize]>) -> Var<'t> {
        let v = self.value();
        offsets_check(&offsets, v.len());
        let mut value = vec![0.0; v.len()];
        for w in offsets.windows(2) {
            let mut acc = 0.0;
            for k in (w[0]..w[1]).rev() {
                value[k] = acc;
                acc += v[k];
            }
        }
        let rg = self.requires_grad();
        self.tape.push(value, Op::SegRevCumSum(self.id, offsets), rg)
    }

    pub fn blur(self, kernel: Rc<BlurKernel>) -> Var<'t> {
        self.blur_impl(kernel, false)
    }

    fn blur_impl(self, kernel: Rc<BlurKernel>, transpose: bool) -> Var<'t> {
        let v = self.value();
        assert_eq!(v.len(), kernel.len(), "blur input size");
        let value = if transpose {
            kernel.apply_transpose(&v)
        } else {
            kernel.apply(&v)
        };
        let rg = self.requires_grad();
        self.tape.push(value, Op::Blur(self.id, kernel, transpose), rg)
    }

    /// Same value, no gradient.
    pub fn detach(self) -> Var<'t> {
        self.tape.constant(self.to_vec())
    }

    pub fn dot(self, other: Var<'t>) -> Var<'t> {
        (self * other).sum()
    }
}

/// Sum with a fixed pairwise reduction tree.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:ident, $f:expr, $scalar:expr, $rscalar:expr) => {
        impl<'t> std::ops::$trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.binary(rhs, Op::$op(self.id, rhs.id), $f)
            }
        }
        impl<'t> std::ops::$trait<f64> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: f64) -> Var<'t> {
                let (scale, shift) = $scalar(rhs);
                self.affine(scale, shift)
            }
        }
        impl<'t> std::ops::$trait<Var<'t>> for f64 {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                $rscalar(self, rhs)
            }
        }
    };
}

binop!(
    Add,
    add,
    Add,
    |a, b| a + b,
    |c: f64| (1.0, c),
    |c: f64, v: Var<'t>| v.affine(1.0, c)
);
binop!(
    Sub,
    sub,
    Sub,
    |a, b| a - b,
    |c: f64| (1.0, -c),
    |c: f64, v: Var<'t>| v.affine(-1.0, c)
);
binop!(
    Mul,
    mul,
    Mul,
    |a, b| a * b,
    |c: f64| (c, 0.0),
    |c: f64, v: Var<'t>| v.affine(c, 0.0)
);
binop!(
    Div,
    div,
    Div,
    |a, b| a / b,
    |c: f64| (1.0 / c, 0.0),
    |c: f64, v: Var<'t>| v.tape.scalar(c) / v
);

impl<'t> std::ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.affine(-1.0, 0.0)
    }
}
