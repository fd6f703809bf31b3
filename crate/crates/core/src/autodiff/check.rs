//! Finite-difference gradient checking.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::Result;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst: Option<usize>,
    pub checked: usize,
    /// Samples skipped because the loss is not smooth around them.
    pub flagged: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Evaluates `loss` without keeping gradients around.
pub fn eval_loss<F>(loss: &F, params: &[f64]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let p = tape.leaf(params.to_vec());
    let v = loss(&tape, p)?;
    tape.check_finite()?;
    Ok(v.item())
}

/// Value and gradient of `loss` at `params`.
pub fn value_and_grad<F>(loss: &F, params: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let p = tape.leaf(params.to_vec());
    let v = loss(&tape, p)?;
    let g = tape.grad(v, &[p])?;
    Ok((v.item(), g[0].to_vec()))
}

/// Whether `f` restricted to one coordinate behaves like a smooth function
/// on `[-3ε, 3ε]`, judged from `f(±kε)`, `k = 1..3`.
///
/// For a smooth function the odd parts `f(kε) - f(-kε)` grow linearly in `k`
/// and the even parts `f(kε) + f(-kε) - 2 f(0)` quadratically. A kink or a
/// jump anywhere in the stencil breaks one of the two scalings.
fn is_smooth(f0: f64, plus: [f64; 3], minus: [f64; 3]) -> bool {
    let noise = 64.0 * f64::EPSILON * plus.iter().chain(&minus).fold(f0.abs(), |m, v| m.max(v.abs()));
    let odd: Vec<f64> = (0..3).map(|k| plus[k] - minus[k]).collect();
    let even: Vec<f64> = (0..3).map(|k| plus[k] + minus[k] - 2.0 * f0).collect();
    for k in 1..3 {
        let scale = (k + 1) as f64;
        let expect_odd = scale * odd[0];
        if (odd[k] - expect_odd).abs() > 1e-3 * odd[k].abs().max(expect_odd.abs()) + 4.0 * noise {
            return false;
        }
        let expect_even = scale * scale * even[0];
        if (even[k] - expect_even).abs() > 1e-3 * even[k].abs().max(expect_even.abs()) + 16.0 * noise {
            return false;
        }
    }
    true
}

/// Compares the analytic gradient against central differences on randomly
/// chosen coordinates.
///
/// Coordinates are drawn without replacement until `samples` smooth ones
/// have been compared or all are exhausted; coordinates where the loss has a
/// kink or jump within `±3ε` are counted in `flagged` and skipped.
pub fn finite_diff_check<F>(loss: &F, params: &[f64], epsilon: f64, samples: usize, seed: u64) -> Result<FdReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let (f0, grad) = value_and_grad(loss, params)?;
    check_gradient(|x| eval_loss(loss, x), f0, &grad, params, epsilon, samples, seed)
}

/// [`finite_diff_check`] for an arbitrary map `f` whose value `f0` and
/// claimed gradient at `params` are already known.
pub fn check_gradient<F>(
    f: F,
    f0: f64,
    grad: &[f64],
    params: &[f64],
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<FdReport>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let mut order: Vec<usize> = (0..params.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        flagged: 0,
    };
    let mut x = params.to_vec();
    for i in order {
        if report.checked == samples {
            break;
        }
        let mut at = |d: f64| -> Result<f64> {
            x[i] = params[i] + d;
            let v = f(&x);
            x[i] = params[i];
            v
        };
        let mut plus = [0.0; 3];
        let mut minus = [0.0; 3];
        for k in 0..3 {
            let h = (k + 1) as f64 * epsilon;
            plus[k] = at(h)?;
            minus[k] = at(-h)?;
        }
        if !is_smooth(f0, plus, minus) {
            report.flagged += 1;
            continue;
        }
        let numeric = (plus[0] - minus[0]) / (2.0 * epsilon);
        // Central differences cannot resolve derivatives much below their
        // own roundoff, `EPS·|f|/ε`; the denominator never drops under the
        // level where that roundoff alone would exceed a 1e-4 relative error.
        let roundoff = f64::EPSILON * f0.abs().max(1.0) / epsilon;
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e4 * roundoff);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(i);
        }
    }
    Ok(report)
}
