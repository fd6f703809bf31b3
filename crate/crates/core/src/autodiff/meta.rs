//! Gradients through unrolled inner gradient-descent steps.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Scalar loss of a parameter vector recorded on a tape.
pub trait Loss: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> {}
impl<F> Loss for F where F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>> {}

/// Pins a closure to the lifetime-generic loss signature, which closure
/// inference does not pick up on its own from a `let` binding.
pub fn loss_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    f
}

/// One masked gradient-descent step `p ← p − lr · mask ⊙ ∇ loss(p)`.
#[derive(Clone, Copy)]
pub struct InnerStep<'a> {
    pub loss: &'a dyn Loss,
    pub lr: f64,
    /// Per-coordinate multiplier, usually 0/1.
    pub mask: &'a [f64],
}

/// Records the inner steps and the outer loss on `tape`, starting from the
/// leaf `theta`. Returns `(adapted params, outer loss)`.
///
/// With `first_order` set, the inner gradients are treated as constants.
pub fn unroll<'t>(
    tape: &'t Tape,
    theta: Var<'t>,
    steps: &[InnerStep<'_>],
    outer: &dyn Loss,
    first_order: bool,
) -> Result<(Var<'t>, Var<'t>)> {
    let mut p = theta;
    for step in steps {
        if step.lr < 0.0 {
            return Err(Error::invalid("inner learning rate must be >= 0"));
        }
        if step.mask.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("mask of length {}", p.len()),
                found: format!("{}", step.mask.len()),
            });
        }
        let inner = (step.loss)(tape, p)?;
        let mut g = tape.grad(inner, &[p])?[0];
        if first_order {
            g = g.detach();
        }
        let scaled: Vec<f64> = step.mask.iter().map(|m| m * step.lr).collect();
        p = p - g * tape.constant(scaled);
    }
    let loss = outer(tape, p)?;
    Ok((p, loss))
}

/// Outer loss value and `d/dθ outer(θ')` where `θ'` is `params` after all
/// `steps`, including the second-order terms through every inner gradient.
pub fn grad_through_inner_steps(
    outer: &dyn Loss,
    steps: &[InnerStep<'_>],
    params: &[f64],
    first_order: bool,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let theta = tape.leaf(params.to_vec());
    let (_, loss) = unroll(&tape, theta, steps, outer, first_order)?;
    let g = tape.grad(loss, &[theta])?;
    Ok((loss.item(), g[0].to_vec()))
}

/// Single-step form of [`grad_through_inner_steps`].
pub fn grad_through_inner_step(
    outer: &dyn Loss,
    inner: &dyn Loss,
    params: &[f64],
    inner_lr: f64,
    inner_mask: &[f64],
) -> Result<Vec<f64>> {
    let step = InnerStep {
        loss: inner,
        lr: inner_lr,
        mask: inner_mask,
    };
    Ok(grad_through_inner_steps(outer, &[step], params, false)?.1)
}

/// Value of the composed inner-outer map, for finite differencing.
pub fn eval_through_inner_steps(outer: &dyn Loss, steps: &[InnerStep<'_>], params: &[f64]) -> Result<f64> {
    let tape = Tape::new();
    let theta = tape.leaf(params.to_vec());
    let (_, loss) = unroll(&tape, theta, steps, outer, false)?;
    tape.check_finite()?;
    Ok(loss.item())
}
