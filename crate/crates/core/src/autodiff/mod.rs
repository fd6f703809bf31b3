//! Reverse-mode differentiation with second-order support.

mod check;
mod meta;
mod params;
mod tape;

pub use check::{check_gradient, eval_loss, finite_diff_check, relative_error, value_and_grad, FdReport};
pub use meta::{
    eval_through_inner_steps, grad_through_inner_step, grad_through_inner_steps, loss_fn, unroll, InnerStep, Loss,
};
pub use params::{Attr, Layout, ParamSet};
pub use tape::{pairwise_sum, BlurKernel, Tape, Var};
