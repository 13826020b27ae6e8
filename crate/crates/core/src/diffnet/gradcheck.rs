//! Central finite-difference verification of tape gradients.

use super::tape::{Tape, Var};

/// Outcome of comparing reverse-mode and finite-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Denominator floor for the relative error, so coordinates whose true
/// gradient vanishes are judged by absolute error instead.
pub const DEFAULT_FLOOR: f64 = 1e-8;

/// Relative discrepancy `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / scale
}

/// Checks the gradient of the scalar `f` at `params` coordinate by coordinate.
///
/// `f` receives one scalar leaf per parameter and must be deterministic.
pub fn grad_check<F>(f: F, params: &[f64], h: f64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    grad_check_with_floor(f, params, h, DEFAULT_FLOOR)
}

pub fn grad_check_with_floor<F>(f: F, params: &[f64], h: f64, floor: f64) -> GradCheckReport
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let analytic = {
        let tape = Tape::new();
        let leaves: Vec<Var> = params.iter().map(|&p| tape.scalar_leaf(p)).collect();
        let out = f(&tape, &leaves);
        let grads = tape.backward(out);
        leaves.iter().map(|&l| grads.scalar(l)).collect::<Vec<_>>()
    };
    let eval = |p: &[f64]| {
        let tape = Tape::new();
        let leaves: Vec<Var> = p.iter().map(|&v| tape.scalar_leaf(v)).collect();
        f(&tape, &leaves).item()
    };
    let mut numeric = Vec::with_capacity(params.len());
    let mut probe = params.to_vec();
    for i in 0..params.len() {
        probe[i] = params[i] + h;
        let up = eval(&probe);
        probe[i] = params[i] - h;
        let down = eval(&probe);
        probe[i] = params[i];
        numeric.push((up - down) / (2.0 * h));
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    }
}
