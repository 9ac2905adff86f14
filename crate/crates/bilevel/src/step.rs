//! The proximal-gradient step and its backtracking step-size search.

use ndarray::Array1;

use crate::oracle::{NonsmoothFn, SmoothFn};
use crate::{ensure_finite, Error, Result};

/// Hard cap on step-size reductions. Hitting it means the declared oracle
/// constants are inconsistent (or the smooth part is not actually smooth),
/// and is reported instead of looping silently.
pub const MAX_BACKTRACK_REDUCTIONS: usize = 200;

/// One proximal-gradient step: `prox_{t g}(x - t grad f(x))`.
pub fn pg_step(
    f: &dyn SmoothFn,
    g: &dyn NonsmoothFn,
    x: &Array1<f64>,
    t: f64,
) -> Result<Array1<f64>> {
    if t <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "step size must be positive, got {t}"
        )));
    }
    let grad = f.gradient(x);
    ensure_finite(&grad, "gradient in pg_step")?;
    let shifted = Array1::from_shape_fn(x.len(), |i| x[i] - t * grad[i]);
    g.prox(&shifted, t)
}

/// Whether `t` satisfies the sufficient-decrease condition
/// `f(x+) <= f(x) + <grad f(x), x+ - x> + ||x+ - x||^2 / (2t)` at `x`.
pub fn sufficient_decrease(
    f: &dyn SmoothFn,
    x: &Array1<f64>,
    x_next: &Array1<f64>,
    t: f64,
) -> bool {
    let grad = f.gradient(x);
    let mut linear = 0.0;
    let mut sq = 0.0;
    for i in 0..x.len() {
        let d = x_next[i] - x[i];
        linear += grad[i] * d;
        sq += d * d;
    }
    f.value(x_next) <= f.value(x) + linear + sq / (2.0 * t)
}

/// Finds the smallest `i >= 0` such that `t = t_bar * gamma^i` passes the
/// sufficient-decrease test, returning `(t, prox-gradient step at t)`.
///
/// Stateless and deterministic: the same inputs always produce the same
/// output. The returned step size lies in `[min(gamma / L_f, t_bar), t_bar]`.
pub fn backtrack(
    f: &dyn SmoothFn,
    g: &dyn NonsmoothFn,
    x: &Array1<f64>,
    t_bar: f64,
    gamma: f64,
) -> Result<(f64, Array1<f64>)> {
    if t_bar <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "backtracking start step must be positive, got {t_bar}"
        )));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "backtracking ratio must lie strictly inside (0, 1), got {gamma}"
        )));
    }
    let mut t = t_bar;
    for _ in 0..=MAX_BACKTRACK_REDUCTIONS {
        let x_next = pg_step(f, g, x, t)?;
        if sufficient_decrease(f, x, &x_next, t) {
            return Ok((t, x_next));
        }
        t *= gamma;
    }
    Err(Error::BacktrackingStalled {
        reductions: MAX_BACKTRACK_REDUCTIONS,
        last_t: t,
    })
}

/// Norm of the prox-gradient mapping `(x - pg_step(x, t)) / t`, the
/// stationarity measure used by the reference oracle's stopping rules.
pub fn gradient_mapping_norm(
    f: &dyn SmoothFn,
    g: &dyn NonsmoothFn,
    x: &Array1<f64>,
    t: f64,
) -> Result<f64> {
    let x_next = pg_step(f, g, x, t)?;
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = (x[i] - x_next[i]) / t;
        acc += d * d;
    }
    Ok(acc.sqrt())
}
