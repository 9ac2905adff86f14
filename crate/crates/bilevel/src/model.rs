//! Bilevel problem assembly: inner and outer composites, the joint proximal
//! oracle of the combined nonsmooth parts, the regularized combination used
//! by the solvers, and oracle self-validation.

use std::sync::Arc;

use ndarray::Array1;
use rand::Rng;

use crate::linalg::dist2;
use crate::oracle::{finite_difference_gap, ArcNonsmooth, Composite, NonsmoothFn, SmoothFn};
use crate::{Error, Result};

/// `prox of t * (g2 + sigma * g1)` as one oracle.
///
/// Computing this prox from the separate proxes of `g1` and `g2` is hard in
/// general, so the problem carries it as an explicit capability: either a
/// closed form supplied by the caller, or the blockwise form produced by the
/// surrogate lifting. Problems without it are rejected by the solvers.
pub trait JointProx: Send + Sync {
    fn prox(&self, x: &Array1<f64>, t: f64, sigma: f64) -> Result<Array1<f64>>;
}

pub type ArcJointProx = Arc<dyn JointProx>;

/// Joint prox for the case `g1 = 0`, where it reduces to the inner prox.
pub struct InnerOnlyJointProx {
    pub g2: ArcNonsmooth,
}

impl JointProx for InnerOnlyJointProx {
    fn prox(&self, x: &Array1<f64>, t: f64, _sigma: f64) -> Result<Array1<f64>> {
        self.g2.prox(x, t)
    }
}

/// Joint prox from an explicit closure, for problems with a known closed form.
pub struct FnJointProx<F>(pub F);

impl<F> JointProx for FnJointProx<F>
where
    F: Fn(&Array1<f64>, f64, f64) -> Result<Array1<f64>> + Send + Sync,
{
    fn prox(&self, x: &Array1<f64>, t: f64, sigma: f64) -> Result<Array1<f64>> {
        (self.0)(x, t, sigma)
    }
}

/// A simple bilevel problem: minimize the outer composite over the minimizers
/// of the inner composite.
#[derive(Clone)]
pub struct BilevelProblem {
    /// Ambient dimension of the decision variable.
    pub dim: usize,
    /// Inner objective `f2 + g2` with smoothness constant `L2`.
    pub inner: Composite,
    /// Outer objective `f1 + g1` with smoothness constant `L1`.
    pub outer: Composite,
    pub joint_prox: Option<ArcJointProx>,
}

impl BilevelProblem {
    pub fn new(
        dim: usize,
        inner: Composite,
        outer: Composite,
        joint_prox: Option<ArcJointProx>,
    ) -> Result<Self> {
        let p = Self {
            dim,
            inner,
            outer,
            joint_prox,
        };
        if !(p.l2().is_finite() && p.l2() >= 0.0 && p.l1().is_finite() && p.l1() >= 0.0) {
            return Err(Error::InvalidConfig(
                "smoothness constants must be finite and nonnegative".into(),
            ));
        }
        Ok(p)
    }

    /// Convenience constructor for problems whose outer nonsmooth part is
    /// zero, where the joint prox is just the inner prox.
    pub fn with_smooth_outer(dim: usize, inner: Composite, outer: Composite) -> Result<Self> {
        let joint = InnerOnlyJointProx {
            g2: inner.nonsmooth.clone(),
        };
        Self::new(dim, inner, outer, Some(Arc::new(joint)))
    }

    pub fn l1(&self) -> f64 {
        self.outer.smoothness()
    }

    pub fn l2(&self) -> f64 {
        self.inner.smoothness()
    }

    /// The regularized combination `inner + sigma * outer` as a composite
    /// whose prox delegates to the joint oracle.
    pub fn regularized(&self, sigma: f64) -> Result<Composite> {
        if sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "regularization weight must be nonnegative, got {sigma}"
            )));
        }
        let joint = self.joint_prox.clone().ok_or(Error::MissingJointProx)?;
        let smooth = RegularizedSmooth {
            f2: self.inner.smooth.clone(),
            f1: self.outer.smooth.clone(),
            sigma,
        };
        let nonsmooth = RegularizedNonsmooth {
            g2: self.inner.nonsmooth.clone(),
            g1: self.outer.nonsmooth.clone(),
            sigma,
            joint,
        };
        Ok(Composite::new(Arc::new(smooth), Arc::new(nonsmooth)))
    }
}

/// `f2 + sigma * f1`.
struct RegularizedSmooth {
    f2: Arc<dyn SmoothFn>,
    f1: Arc<dyn SmoothFn>,
    sigma: f64,
}

impl SmoothFn for RegularizedSmooth {
    fn value(&self, x: &Array1<f64>) -> f64 {
        self.f2.value(x) + self.sigma * self.f1.value(x)
    }
    fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        let g2 = self.f2.gradient(x);
        let g1 = self.f1.gradient(x);
        Array1::from_shape_fn(x.len(), |i| g2[i] + self.sigma * g1[i])
    }
    fn smoothness(&self) -> f64 {
        self.f2.smoothness() + self.sigma * self.f1.smoothness()
    }
}

/// `g2 + sigma * g1`, with the prox served by the joint oracle.
struct RegularizedNonsmooth {
    g2: ArcNonsmooth,
    g1: ArcNonsmooth,
    sigma: f64,
    joint: ArcJointProx,
}

impl NonsmoothFn for RegularizedNonsmooth {
    fn value(&self, x: &Array1<f64>) -> f64 {
        let v2 = self.g2.value(x);
        if self.sigma == 0.0 {
            // Avoid 0 * inf when x is outside the outer domain.
            return v2;
        }
        v2 + self.sigma * self.g1.value(x)
    }
    fn prox(&self, x: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
        self.joint.prox(x, lambda, self.sigma)
    }
}

/// The schedule `sigma_k = k^(-beta)`, starting at `k = 1`.
#[derive(Debug, Clone, Copy)]
pub struct RegularizationSchedule {
    pub beta: f64,
}

impl RegularizationSchedule {
    pub fn new(beta: f64) -> Self {
        Self { beta }
    }

    pub fn sigma(&self, k: usize) -> f64 {
        (k as f64).powf(-self.beta)
    }
}

/// One oracle self-consistency check over random probes.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub probes: usize,
    /// Worst signed slack seen; nonnegative means the property held.
    pub worst_margin: f64,
    pub worst_probe: usize,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

const FD_TOL: f64 = 1e-6;
const INEQ_TOL: f64 = 1e-9;

/// Runs gradient, descent-lemma, second-prox, and nonexpansiveness checks on
/// both composites of `p` plus its joint prox, over `probes` random points.
///
/// The boundedness of the bilevel solution set cannot be probed numerically;
/// it is recorded as an untestable assumption in the notes.
pub fn validate(p: &BilevelProblem, probes: usize) -> ValidationReport {
    let dim = p.dim;
    let mut checks = Vec::new();
    let mut notes =
        vec!["assumed, not tested: the bilevel solution set is nonempty and bounded".to_string()];

    for (label, comp) in [("inner", &p.inner), ("outer", &p.outer)] {
        checks.push(gradient_check(
            &format!("{label}.gradient_vs_finite_differences"),
            comp.smooth.as_ref(),
            dim,
            probes,
        ));
        checks.push(descent_lemma_check(
            &format!("{label}.descent_lemma"),
            comp.smooth.as_ref(),
            dim,
            probes,
        ));
        if comp.nonsmooth.prox_available() {
            checks.push(second_prox_check(
                &format!("{label}.second_prox"),
                comp.nonsmooth.as_ref(),
                dim,
                probes,
            ));
            checks.push(nonexpansive_check(
                &format!("{label}.prox_nonexpansive"),
                comp.nonsmooth.as_ref(),
                dim,
                probes,
            ));
        } else {
            notes.push(format!(
                "{label} nonsmooth part has no usable prox; prox checks skipped"
            ));
        }
    }

    if let Some(joint) = &p.joint_prox {
        checks.extend(joint_prox_checks(
            p,
            joint.as_ref(),
            dim,
            probes,
            &mut notes,
        ));
    } else {
        notes.push("no joint prox: the problem must be lifted before solving".into());
    }

    let pass = checks.iter().all(|c| c.pass);
    ValidationReport {
        checks,
        notes,
        pass,
    }
}

fn gradient_check(name: &str, f: &dyn SmoothFn, dim: usize, probes: usize) -> CheckResult {
    let mut rng = crate::rng::substream(101, name);
    let mut worst = f64::INFINITY;
    let mut worst_probe = 0;
    for i in 0..probes {
        let x = Array1::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0));
        let margin = FD_TOL - finite_difference_gap(f, &x);
        if margin < worst {
            worst = margin;
            worst_probe = i;
        }
    }
    CheckResult {
        name: name.into(),
        probes,
        worst_margin: worst,
        worst_probe,
        pass: worst >= 0.0,
    }
}

fn descent_lemma_check(name: &str, f: &dyn SmoothFn, dim: usize, probes: usize) -> CheckResult {
    let mut rng = crate::rng::substream(103, name);
    let l = f.smoothness();
    let mut worst = f64::INFINITY;
    let mut worst_probe = 0;
    for i in 0..probes {
        let x = Array1::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0));
        let y = Array1::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0));
        let d = dist2(&x, &y);
        let quad = f.value(&x) + f.gradient(&x).dot(&(&y - &x)) + 0.5 * l * d * d;
        let scale = 1.0 + quad.abs();
        let margin = (quad - f.value(&y)) / scale + INEQ_TOL;
        if margin < worst {
            worst = margin;
            worst_probe = i;
        }
    }
    CheckResult {
        name: name.into(),
        probes,
        worst_margin: worst,
        worst_probe,
        pass: worst >= 0.0,
    }
}

fn second_prox_check(name: &str, g: &dyn NonsmoothFn, dim: usize, probes: usize) -> CheckResult {
    let mut rng = crate::rng::substream(107, name);
    let mut worst = f64::INFINITY;
    let mut worst_probe = 0;
    for i in 0..probes {
        let x = Array1::from_shape_fn(dim, |_| rng.random_range(-3.0..3.0));
        let lambda = rng.random_range(0.05..2.0);
        let Ok(u) = g.prox(&x, lambda) else {
            worst = f64::NEG_INFINITY;
            worst_probe = i;
            break;
        };
        // Probe a y with finite value: fall back to u itself if the random
        // draw lands outside the domain.
        let mut y = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
        if !g.value(&y).is_finite() {
            y = u.clone();
        }
        let lhs: f64 = (0..dim).map(|j| (x[j] - u[j]) * (y[j] - u[j])).sum();
        let rhs = lambda * (g.value(&y) - g.value(&u));
        if !rhs.is_finite() {
            continue;
        }
        let margin = (rhs - lhs) / (1.0 + rhs.abs()) + INEQ_TOL;
        if margin < worst {
            worst = margin;
            worst_probe = i;
        }
    }
    CheckResult {
        name: name.into(),
        probes,
        worst_margin: worst,
        worst_probe,
        pass: worst >= 0.0,
    }
}

fn nonexpansive_check(name: &str, g: &dyn NonsmoothFn, dim: usize, probes: usize) -> CheckResult {
    let mut rng = crate::rng::substream(109, name);
    let mut worst = f64::INFINITY;
    let mut worst_probe = 0;
    for i in 0..probes {
        let x = Array1::from_shape_fn(dim, |_| rng.random_range(-3.0..3.0));
        let y = Array1::from_shape_fn(dim, |_| rng.random_range(-3.0..3.0));
        let lambda = rng.random_range(0.05..2.0);
        let (Ok(px), Ok(py)) = (g.prox(&x, lambda), g.prox(&y, lambda)) else {
            worst = f64::NEG_INFINITY;
            worst_probe = i;
            break;
        };
        let margin = dist2(&x, &y) - dist2(&px, &py) + INEQ_TOL;
        if margin < worst {
            worst = margin;
            worst_probe = i;
        }
    }
    CheckResult {
        name: name.into(),
        probes,
        worst_margin: worst,
        worst_probe,
        pass: worst >= 0.0,
    }
}

fn joint_prox_checks(
    p: &BilevelProblem,
    joint: &dyn JointProx,
    dim: usize,
    probes: usize,
    notes: &mut Vec<String>,
) -> Vec<CheckResult> {
    let mut out = Vec::new();

    // At sigma = 0 the joint prox must agree with the inner prox alone.
    let mut rng = crate::rng::substream(113, "joint-prox-sigma0");
    let mut worst = f64::INFINITY;
    let mut worst_probe = 0;
    for i in 0..probes {
        let x = Array1::from_shape_fn(dim, |_| rng.random_range(-3.0..3.0));
        let lambda = rng.random_range(0.05..2.0);
        let (Ok(a), Ok(b)) = (
            joint.prox(&x, lambda, 0.0),
            p.inner.nonsmooth.prox(&x, lambda),
        ) else {
            notes.push("joint prox at sigma = 0 could not be compared".into());
            worst = f64::NEG_INFINITY;
            worst_probe = i;
            break;
        };
        let margin = 1e-12 - dist2(&a, &b);
        if margin < worst {
            worst = margin;
            worst_probe = i;
        }
    }
    out.push(CheckResult {
        name: "joint_prox.sigma_zero_agrees_with_inner".into(),
        probes,
        worst_margin: worst,
        worst_probe,
        pass: worst >= 0.0,
    });

    // Second-prox inequality for g2 + sigma * g1 at random sigma.
    let mut rng = crate::rng::substream(127, "joint-prox-second");
    let g_sigma = |x: &Array1<f64>, sigma: f64| {
        let v2 = p.inner.nonsmooth.value(x);
        if sigma == 0.0 {
            v2
        } else {
            v2 + sigma * p.outer.nonsmooth.value(x)
        }
    };
    let mut worst = f64::INFINITY;
    let mut worst_probe = 0;
    for i in 0..probes {
        let x = Array1::from_shape_fn(dim, |_| rng.random_range(-3.0..3.0));
        let lambda = rng.random_range(0.05..2.0);
        let sigma = rng.random_range(0.0..1.0);
        let Ok(u) = joint.prox(&x, lambda, sigma) else {
            worst = f64::NEG_INFINITY;
            worst_probe = i;
            break;
        };
        let mut y = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
        if !g_sigma(&y, sigma).is_finite() {
            y = u.clone();
        }
        let lhs: f64 = (0..dim).map(|j| (x[j] - u[j]) * (y[j] - u[j])).sum();
        let rhs = lambda * (g_sigma(&y, sigma) - g_sigma(&u, sigma));
        if !rhs.is_finite() {
            continue;
        }
        let margin = (rhs - lhs) / (1.0 + rhs.abs()) + INEQ_TOL;
        if margin < worst {
            worst = margin;
            worst_probe = i;
        }
    }
    out.push(CheckResult {
        name: "joint_prox.second_prox".into(),
        probes,
        worst_margin: worst,
        worst_probe,
        pass: worst >= 0.0,
    });

    out
}
