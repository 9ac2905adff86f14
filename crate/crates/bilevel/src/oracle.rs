//! Function oracles: smooth parts with gradients and declared smoothness
//! constants, nonsmooth parts with proximal operators, and their composites.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::linalg::{dist2, norm2, operator_norm};
use crate::{ensure_finite, Error, Result};

/// A convex differentiable function with a Lipschitz-continuous gradient.
///
/// Implementations must be pure: no interior mutability, safe to call from
/// any thread. `smoothness` is the declared Lipschitz constant of the
/// gradient; the validation suite checks it against the quadratic upper bound
/// on random point pairs.
pub trait SmoothFn: Send + Sync {
    fn value(&self, x: &Array1<f64>) -> f64;
    fn gradient(&self, x: &Array1<f64>) -> Array1<f64>;
    fn smoothness(&self) -> f64;
}

/// A proper closed convex function, possibly extended-real-valued, whose
/// proximal operator may or may not have a usable form.
pub trait NonsmoothFn: Send + Sync {
    /// Function value; `f64::INFINITY` outside the domain.
    fn value(&self, x: &Array1<f64>) -> f64;

    /// `argmin_u value(u) + ||u - x||^2 / (2 lambda)`.
    fn prox(&self, x: &Array1<f64>, lambda: f64) -> Result<Array1<f64>>;

    fn prox_available(&self) -> bool {
        true
    }

    /// Some element of the subdifferential at `x`, when one is cheap to
    /// produce. Used only for empirical Lipschitz estimates in reports.
    fn subgradient(&self, _x: &Array1<f64>) -> Option<Array1<f64>> {
        None
    }

    /// For functions of the form `h(Sx)`: the factors `(S, h)`.
    fn matrix_composition(&self) -> Option<(&Array2<f64>, &Arc<dyn NonsmoothFn>)> {
        None
    }
}

pub type ArcSmooth = Arc<dyn SmoothFn>;
pub type ArcNonsmooth = Arc<dyn NonsmoothFn>;

/// A smooth function paired with a prox-friendly nonsmooth one.
#[derive(Clone)]
pub struct Composite {
    pub smooth: ArcSmooth,
    pub nonsmooth: ArcNonsmooth,
}

impl Composite {
    pub fn new(smooth: ArcSmooth, nonsmooth: ArcNonsmooth) -> Self {
        Self { smooth, nonsmooth }
    }

    pub fn value(&self, x: &Array1<f64>) -> f64 {
        self.smooth.value(x) + self.nonsmooth.value(x)
    }

    pub fn smoothness(&self) -> f64 {
        self.smooth.smoothness()
    }
}

/// Componentwise soft-thresholding, the prox of `lambda * ||.||_1`.
pub fn prox_l1(x: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
    if lambda <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "soft threshold requires lambda > 0, got {lambda}"
        )));
    }
    ensure_finite(x, "prox_l1 input")?;
    Ok(x.mapv(|v| v.signum() * (v.abs() - lambda).max(0.0)))
}

/// Componentwise clamp onto `[lo, hi]`, the prox of the box indicator
/// (independent of the prox parameter).
pub fn prox_box(x: &Array1<f64>, lo: &Array1<f64>, hi: &Array1<f64>) -> Result<Array1<f64>> {
    if x.len() != lo.len() || x.len() != hi.len() {
        return Err(Error::DimensionMismatch(format!(
            "prox_box: x has {} components, bounds have {} and {}",
            x.len(),
            lo.len(),
            hi.len()
        )));
    }
    if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
        return Err(Error::InvalidConfig(
            "prox_box: lower bound exceeds upper bound".into(),
        ));
    }
    ensure_finite(x, "prox_box input")?;
    Ok(Array1::from_shape_fn(x.len(), |i| x[i].clamp(lo[i], hi[i])))
}

/// Euclidean projection onto the closed ball `B(center, radius)`.
pub fn project_ball(z: &Array1<f64>, center: &Array1<f64>, radius: f64) -> Result<Array1<f64>> {
    if radius < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "ball radius must be nonnegative, got {radius}"
        )));
    }
    if z.len() != center.len() {
        return Err(Error::DimensionMismatch(
            "project_ball: point and center differ in length".into(),
        ));
    }
    ensure_finite(z, "project_ball input")?;
    let d = dist2(z, center);
    if d <= radius {
        return Ok(z.clone());
    }
    let scale = radius / d;
    Ok(Array1::from_shape_fn(z.len(), |i| {
        center[i] + scale * (z[i] - center[i])
    }))
}

/// The zero function; its prox is the identity.
pub struct Zero;

impl SmoothFn for Zero {
    fn value(&self, _x: &Array1<f64>) -> f64 {
        0.0
    }
    fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        Array1::zeros(x.len())
    }
    fn smoothness(&self) -> f64 {
        0.0
    }
}

impl NonsmoothFn for Zero {
    fn value(&self, _x: &Array1<f64>) -> f64 {
        0.0
    }
    fn prox(&self, x: &Array1<f64>, _lambda: f64) -> Result<Array1<f64>> {
        Ok(x.clone())
    }
    fn subgradient(&self, x: &Array1<f64>) -> Option<Array1<f64>> {
        Some(Array1::zeros(x.len()))
    }
}

/// `(weight / 2) * ||x - center||^2`.
pub struct SquaredDistance {
    pub center: Array1<f64>,
    pub weight: f64,
}

impl SquaredDistance {
    pub fn new(center: Array1<f64>, weight: f64) -> Self {
        Self { center, weight }
    }
}

impl SmoothFn for SquaredDistance {
    fn value(&self, x: &Array1<f64>) -> f64 {
        let d = dist2(x, &self.center);
        0.5 * self.weight * d * d
    }
    fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        Array1::from_shape_fn(x.len(), |i| self.weight * (x[i] - self.center[i]))
    }
    fn smoothness(&self) -> f64 {
        self.weight
    }
}

/// `weight * ||x||_1`.
pub struct L1Norm {
    pub weight: f64,
}

impl L1Norm {
    pub fn new(weight: f64) -> Self {
        Self { weight }
    }
}

impl NonsmoothFn for L1Norm {
    fn value(&self, x: &Array1<f64>) -> f64 {
        self.weight * x.iter().map(|v| v.abs()).sum::<f64>()
    }
    fn prox(&self, x: &Array1<f64>, lambda: f64) -> Result<Array1<f64>> {
        prox_l1(x, lambda * self.weight)
    }
    fn subgradient(&self, x: &Array1<f64>) -> Option<Array1<f64>> {
        Some(x.mapv(|v| self.weight * v.signum()))
    }
}

/// Indicator of the box `[lo, hi]`.
pub struct BoxIndicator {
    pub lo: Array1<f64>,
    pub hi: Array1<f64>,
}

impl BoxIndicator {
    pub fn new(lo: Array1<f64>, hi: Array1<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::InvalidConfig("box bounds are inconsistent".into()));
        }
        Ok(Self { lo, hi })
    }

    /// The symmetric box `[-r, r]^n`.
    pub fn symmetric(n: usize, r: f64) -> Self {
        Self {
            lo: Array1::from_elem(n, -r),
            hi: Array1::from_elem(n, r),
        }
    }

    pub fn contains(&self, x: &Array1<f64>) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (l, h))| *v >= *l && *v <= *h)
    }
}

impl NonsmoothFn for BoxIndicator {
    fn value(&self, x: &Array1<f64>) -> f64 {
        if self.contains(x) {
            0.0
        } else {
            f64::INFINITY
        }
    }
    fn prox(&self, x: &Array1<f64>, _lambda: f64) -> Result<Array1<f64>> {
        prox_box(x, &self.lo, &self.hi)
    }
    fn subgradient(&self, x: &Array1<f64>) -> Option<Array1<f64>> {
        if self.contains(x) {
            Some(Array1::zeros(x.len()))
        } else {
            None
        }
    }
}

/// `0.5 * dist(Ax, B(y, tau))^2`, the smooth part of the bounded-noise
/// recovery objective. The half keeps the declared smoothness constant
/// `sigma_max(A)^2` exact.
pub struct HalfSqDistAffine {
    a: Array2<f64>,
    y: Array1<f64>,
    tau: f64,
    smoothness: f64,
}

impl HalfSqDistAffine {
    pub fn new(a: Array2<f64>, y: Array1<f64>, tau: f64) -> Result<Self> {
        if a.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows but the offset has {} components",
                a.nrows(),
                y.len()
            )));
        }
        if tau < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ball radius must be nonnegative, got {tau}"
            )));
        }
        let sigma_max = operator_norm(&a)?;
        Ok(Self {
            a,
            y,
            tau,
            smoothness: sigma_max * sigma_max,
        })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }
}

impl SmoothFn for HalfSqDistAffine {
    fn value(&self, x: &Array1<f64>) -> f64 {
        let ax = self.a.dot(x);
        let excess = (dist2(&ax, &self.y) - self.tau).max(0.0);
        0.5 * excess * excess
    }
    fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
        let ax = self.a.dot(x);
        let proj = project_ball(&ax, &self.y, self.tau).expect("finite projection input");
        let residual = &ax - &proj;
        residual.dot(&self.a)
    }
    fn smoothness(&self) -> f64 {
        self.smoothness
    }
}

/// `h(Sx)` for a prox-friendly `h`; the composition itself has no usable
/// prox, so problems built on it must be lifted before solving.
pub struct MatrixComposed {
    mat: Array2<f64>,
    inner: ArcNonsmooth,
    label: String,
}

impl MatrixComposed {
    pub fn new(mat: Array2<f64>, inner: ArcNonsmooth, label: impl Into<String>) -> Self {
        Self {
            mat,
            inner,
            label: label.into(),
        }
    }
}

impl NonsmoothFn for MatrixComposed {
    fn value(&self, x: &Array1<f64>) -> f64 {
        self.inner.value(&self.mat.dot(x))
    }
    fn prox(&self, _x: &Array1<f64>, _lambda: f64) -> Result<Array1<f64>> {
        Err(Error::ProxUnavailable(self.label.clone()))
    }
    fn prox_available(&self) -> bool {
        false
    }
    fn subgradient(&self, x: &Array1<f64>) -> Option<Array1<f64>> {
        let g = self.inner.subgradient(&self.mat.dot(x))?;
        Some(g.dot(&self.mat))
    }
    fn matrix_composition(&self) -> Option<(&Array2<f64>, &ArcNonsmooth)> {
        Some((&self.mat, &self.inner))
    }
}

/// Checks that `gradient` matches central finite differences of `value` at
/// `x`. Returns the worst relative deviation over all components.
pub fn finite_difference_gap(f: &dyn SmoothFn, x: &Array1<f64>) -> f64 {
    let h = 1e-5 * (1.0 + norm2(x));
    let grad = f.gradient(x);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h);
        let scale = 1.0 + grad[i].abs().max(fd.abs());
        worst = worst.max((fd - grad[i]).abs() / scale);
    }
    worst
}
