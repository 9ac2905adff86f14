//! Iteratively regularized proximal-gradient solvers.
//!
//! Both solvers run one proximal-gradient step per iteration on the
//! regularized combination `phi_k = inner + sigma_k * outer` with
//! `sigma_k = k^(-beta)`: [`ire_pg`] steps from the previous iterate,
//! [`ire_apg`] adds momentum in the usual accelerated pattern. Each run
//! returns a [`SolverTrace`] with geometrically spaced snapshots, ergodic
//! points under the rule-specific weights, best-iterate selections over
//! `{K+1, ..., 2K}` windows, and (in [`Mode::Verify`]) per-iteration
//! inequality instrumentation. [`check_rate_bounds`] evaluates the explicit
//! rate-bound right-hand sides against a trace.

use ndarray::Array1;

use crate::experiments::ReferenceSolution;
use crate::linalg::dist2;
use crate::model::{BilevelProblem, RegularizationSchedule};
use crate::oracle::{NonsmoothFn, SmoothFn};
use crate::step::{backtrack, gradient_mapping_norm, pg_step};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    IrePg,
    IreApg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `t_k = 1 / (L2 + sigma_k * L1)`.
    Constant,
    /// Step-size search by repeated reduction. The plain solver restarts
    /// from `t_bar` every iteration; the accelerated one warm-starts from
    /// `t_{k-1}`, making its step sizes nonincreasing.
    Backtracking { gamma: f64, t_bar: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// No per-iteration inequality checks.
    Fast,
    /// Check every per-iteration inequality; needs a reference solution.
    Verify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogSchedule {
    /// Log k in {1, 2, 4, 8, ...} plus the final iteration.
    Geometric,
    EveryIteration,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub beta: f64,
    pub step_rule: StepRule,
    pub iterations: usize,
    pub mode: Mode,
    pub log: LogSchedule,
    /// Windows `K` for best-iterate tracking over `{K+1, ..., 2K}`; each
    /// needs `2K <= iterations` and a reference solution.
    pub kstar_windows: Vec<usize>,
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm, beta: f64, step_rule: StepRule, iterations: usize) -> Self {
        Self {
            algorithm,
            beta,
            step_rule,
            iterations,
            mode: Mode::Fast,
            log: LogSchedule::Geometric,
            kstar_windows: Vec::new(),
        }
    }

    pub fn verify(mut self) -> Self {
        self.mode = Mode::Verify;
        self
    }

    pub fn log_every_iteration(mut self) -> Self {
        self.log = LogSchedule::EveryIteration;
        self
    }

    pub fn with_kstar_windows(mut self, windows: &[usize]) -> Self {
        self.kstar_windows = windows.to_vec();
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.algorithm {
            Algorithm::IrePg => {
                if !(self.beta > 0.0 && self.beta < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "the plain solver requires beta in (0, 1), got {}",
                        self.beta
                    )));
                }
            }
            Algorithm::IreApg => {
                if !(self.beta > 0.0 && self.beta <= 2.0) {
                    return Err(Error::InvalidConfig(format!(
                        "the accelerated solver requires beta in (0, 2], got {}",
                        self.beta
                    )));
                }
            }
        }
        if let StepRule::Backtracking { gamma, t_bar } = self.step_rule {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "backtracking ratio must lie strictly inside (0, 1), got {gamma}"
                )));
            }
            if t_bar <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "backtracking start step must be positive, got {t_bar}"
                )));
            }
        }
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iteration budget is zero".into()));
        }
        for &w in &self.kstar_windows {
            if w == 0 || 2 * w > self.iterations {
                return Err(Error::InvalidConfig(format!(
                    "best-iterate window {w} needs 2K <= iterations = {}",
                    self.iterations
                )));
            }
        }
        Ok(())
    }
}

/// The momentum scalars `s_0 = 1`, `s_k = (1 + sqrt(1 + 4 s_{k-1}^2)) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct FistaSequence {
    s: f64,
}

impl FistaSequence {
    pub fn new() -> Self {
        Self { s: 1.0 }
    }

    pub fn value(&self) -> f64 {
        self.s
    }

    /// Advances to `s_{k+1}` and returns it.
    pub fn advance(&mut self) -> f64 {
        self.s = 0.5 * (1.0 + (1.0 + 4.0 * self.s * self.s).sqrt());
        self.s
    }
}

impl Default for FistaSequence {
    fn default() -> Self {
        Self::new()
    }
}

/// One logged snapshot. Values are those of the problem handed to the
/// solver (the surrogate functions, for lifted runs); gaps come from
/// subtracting the reference optima.
#[derive(Debug, Clone)]
pub struct LoggedPoint {
    pub k: usize,
    pub sigma: f64,
    pub t: f64,
    pub x: Array1<f64>,
    pub phi_value: f64,
    pub omega_value: f64,
    pub ergodic_x: Array1<f64>,
    pub ergodic_phi_value: f64,
    pub ergodic_omega_value: f64,
}

/// Scalar series kept for every iteration when the run tracks values
/// (verify mode or best-iterate windows); index 0 holds k = 1.
#[derive(Debug, Clone, Default)]
pub struct PerIteration {
    pub sigma: Vec<f64>,
    pub t: Vec<f64>,
    pub phi_value: Vec<f64>,
    pub omega_value: Vec<f64>,
}

/// Winner of one best-iterate window: the k in `{K+1, ..., 2K}` minimizing
/// `t_k (phi(x_k) - phi*) + t_k sigma_k (omega(x_k) - omega*)`, ties going
/// to the smallest k.
#[derive(Debug, Clone)]
pub struct KStarResult {
    pub window: usize,
    pub k_star: usize,
    pub criterion: f64,
    pub x: Array1<f64>,
    pub phi_value: f64,
    pub omega_value: f64,
}

/// Aggregate of one per-iteration inequality over a whole run. `worst_slack`
/// is the most negative slack seen (nonnegative slack means the inequality
/// held strictly); the check passes if it stays above `-neg_tolerance`.
#[derive(Debug, Clone)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub evaluations: usize,
    pub worst_slack: f64,
    pub worst_k: usize,
    pub neg_tolerance: f64,
    pub pass: bool,
}

struct InvariantAcc {
    name: &'static str,
    evaluations: usize,
    worst_slack: f64,
    worst_k: usize,
    neg_tolerance: f64,
}

impl InvariantAcc {
    fn new(name: &'static str, neg_tolerance: f64) -> Self {
        Self {
            name,
            evaluations: 0,
            worst_slack: f64::INFINITY,
            worst_k: 0,
            neg_tolerance,
        }
    }

    fn record(&mut self, k: usize, slack: f64) {
        self.evaluations += 1;
        if slack < self.worst_slack {
            self.worst_slack = slack;
            self.worst_k = k;
        }
    }

    fn finish(self) -> InvariantCheck {
        InvariantCheck {
            name: self.name,
            evaluations: self.evaluations,
            worst_slack: self.worst_slack,
            worst_k: self.worst_k,
            neg_tolerance: self.neg_tolerance,
            pass: self.evaluations == 0 || self.worst_slack >= -self.neg_tolerance,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverTrace {
    pub config: SolverConfig,
    pub x0: Array1<f64>,
    pub logged: Vec<LoggedPoint>,
    pub per_iteration: Option<PerIteration>,
    pub kstar: Vec<KStarResult>,
    pub invariants: Vec<InvariantCheck>,
    /// `||x0 - x*||` when a reference was supplied.
    pub x0_dist: Option<f64>,
    /// `max_k ||x_k - x*||` over the whole run, including k = 0.
    pub d_hat: Option<f64>,
    pub reference: Option<ReferenceSolution>,
}

impl SolverTrace {
    pub fn final_point(&self) -> &LoggedPoint {
        self.logged
            .last()
            .expect("a completed trace logs at least one point")
    }

    pub fn phi_gap(&self, point: &LoggedPoint) -> Option<f64> {
        self.reference
            .as_ref()
            .map(|r| point.phi_value - r.phi_star)
    }

    pub fn omega_gap(&self, point: &LoggedPoint) -> Option<f64> {
        self.reference
            .as_ref()
            .map(|r| point.omega_value - r.omega_star)
    }

    pub fn invariant(&self, name: &str) -> Option<&InvariantCheck> {
        self.invariants.iter().find(|c| c.name == name)
    }

    pub fn invariants_pass(&self) -> bool {
        self.invariants.iter().all(|c| c.pass)
    }
}

/// Looks up the best-iterate result for window `K`; the window must have
/// been registered in the config before the run.
pub fn best_iterate(trace: &SolverTrace, window: usize) -> Result<&KStarResult> {
    trace
        .kstar
        .iter()
        .find(|r| r.window == window)
        .ok_or(Error::WindowNotCovered(window))
}

enum ErgodicRule {
    Pg,
    ApgConstant,
    ApgBacktracking,
}

struct Pending {
    x: Array1<f64>,
    s2: f64,
    sigma: f64,
    t: f64,
}

/// Running weighted average of iterates. The accelerated rules finalize the
/// weight of `x_k` one iteration late (it needs `sigma_{k+1}` and, under
/// backtracking, `t_{k+1}`) and apply the special final-term weight only at
/// evaluation time, so any-prefix ergodic points cost O(1) per iteration.
struct Ergodic {
    rule: ErgodicRule,
    sum_wx: Array1<f64>,
    sum_w: f64,
    pending: Option<Pending>,
}

impl Ergodic {
    fn new(rule: ErgodicRule, dim: usize) -> Self {
        Self {
            rule,
            sum_wx: Array1::zeros(dim),
            sum_w: 0.0,
            pending: None,
        }
    }

    fn push(&mut self, x: &Array1<f64>, sigma: f64, t: f64, s2_prev: f64) {
        match self.rule {
            ErgodicRule::Pg => {
                let w = sigma * t;
                self.sum_wx.scaled_add(w, x);
                self.sum_w += w;
            }
            ErgodicRule::ApgConstant | ErgodicRule::ApgBacktracking => {
                if let Some(p) = self.pending.take() {
                    let w = match self.rule {
                        ErgodicRule::ApgConstant => p.s2 * (p.sigma - sigma),
                        _ => p.s2 * (p.sigma * p.t - sigma * t),
                    };
                    self.sum_wx.scaled_add(w, &p.x);
                    self.sum_w += w;
                }
                self.pending = Some(Pending {
                    x: x.clone(),
                    s2: s2_prev,
                    sigma,
                    t,
                });
            }
        }
    }

    fn point(&self) -> Array1<f64> {
        match self.rule {
            ErgodicRule::Pg => {
                let mut p = self.sum_wx.clone();
                p.mapv_inplace(|v| v / self.sum_w);
                p
            }
            _ => {
                let pending = self.pending.as_ref().expect("push precedes point");
                let w_final = match self.rule {
                    ErgodicRule::ApgConstant => pending.sigma * pending.s2,
                    _ => pending.sigma * pending.t * pending.s2,
                };
                let total = self.sum_w + w_final;
                let mut p = self.sum_wx.clone();
                p.scaled_add(w_final, &pending.x);
                p.mapv_inplace(|v| v / total);
                p
            }
        }
    }
}

struct KStarTracker {
    window: usize,
    best: Option<KStarResult>,
}

impl KStarTracker {
    fn update(
        &mut self,
        k: usize,
        t: f64,
        sigma: f64,
        phi_v: f64,
        omega_v: f64,
        x: &Array1<f64>,
        r: &ReferenceSolution,
    ) {
        if k <= self.window || k > 2 * self.window {
            return;
        }
        let criterion = t * (phi_v - r.phi_star) + t * sigma * (omega_v - r.omega_star);
        let better = match &self.best {
            None => true,
            Some(b) => criterion < b.criterion,
        };
        if better {
            self.best = Some(KStarResult {
                window: self.window,
                k_star: k,
                criterion,
                x: x.clone(),
                phi_value: phi_v,
                omega_value: omega_v,
            });
        }
    }
}

fn geometric_logging(k: usize, next_log: &mut usize, last: usize) -> bool {
    if k == *next_log {
        *next_log *= 2;
        true
    } else {
        k == last
    }
}

/// Runs the solver named by `cfg.algorithm`.
///
/// `reference` is required for verify mode and best-iterate windows; without
/// it those features are disabled and noted by an empty `invariants` /
/// `kstar`. The run is deterministic: identical inputs give bit-identical
/// traces.
pub fn solve(
    problem: &BilevelProblem,
    cfg: &SolverConfig,
    x0: &Array1<f64>,
    reference: Option<&ReferenceSolution>,
) -> Result<SolverTrace> {
    match cfg.algorithm {
        Algorithm::IrePg => ire_pg(problem, cfg, x0, reference),
        Algorithm::IreApg => ire_apg(problem, cfg, x0, reference),
    }
}

fn preflight(
    problem: &BilevelProblem,
    cfg: &SolverConfig,
    x0: &Array1<f64>,
    reference: Option<&ReferenceSolution>,
    expected: Algorithm,
) -> Result<()> {
    if cfg.algorithm != expected {
        return Err(Error::InvalidConfig(format!(
            "config names {:?} but {expected:?} was invoked",
            cfg.algorithm
        )));
    }
    cfg.validate()?;
    if problem.joint_prox.is_none() {
        return Err(Error::MissingJointProx);
    }
    if x0.len() != problem.dim {
        return Err(Error::DimensionMismatch(format!(
            "start point has {} components, problem dimension is {}",
            x0.len(),
            problem.dim
        )));
    }
    if cfg.mode == Mode::Verify && reference.is_none() {
        return Err(Error::InvalidConfig(
            "verify mode needs a reference solution".into(),
        ));
    }
    if !cfg.kstar_windows.is_empty() && reference.is_none() {
        return Err(Error::InvalidConfig(
            "best-iterate tracking needs a reference solution (the selection criterion is undefined without the optima)".into(),
        ));
    }
    Ok(())
}

struct RunCommon<'a> {
    problem: &'a BilevelProblem,
    cfg: &'a SolverConfig,
    schedule: RegularizationSchedule,
    track_values: bool,
    per_iter: PerIteration,
    logged: Vec<LoggedPoint>,
    next_log: usize,
    kstar: Vec<KStarTracker>,
    reference: Option<&'a ReferenceSolution>,
    // Values of the solved problem's functions at the reference point; the
    // per-iteration inequalities are exact statements about this point.
    ref_phi: f64,
    ref_omega: f64,
    x0_dist: Option<f64>,
    d_hat: Option<f64>,
}

impl<'a> RunCommon<'a> {
    fn new(
        problem: &'a BilevelProblem,
        cfg: &'a SolverConfig,
        x0: &Array1<f64>,
        reference: Option<&'a ReferenceSolution>,
    ) -> Self {
        let track_values = cfg.mode == Mode::Verify || !cfg.kstar_windows.is_empty();
        let (ref_phi, ref_omega, x0_dist) = match reference {
            Some(r) => (
                problem.inner.value(&r.x_star),
                problem.outer.value(&r.x_star),
                Some(dist2(x0, &r.x_star)),
            ),
            None => (f64::NAN, f64::NAN, None),
        };
        Self {
            problem,
            cfg,
            schedule: RegularizationSchedule::new(cfg.beta),
            track_values,
            per_iter: PerIteration::default(),
            logged: Vec::new(),
            next_log: 1,
            kstar: cfg
                .kstar_windows
                .iter()
                .map(|&w| KStarTracker {
                    window: w,
                    best: None,
                })
                .collect(),
            reference,
            ref_phi,
            ref_omega,
            x0_dist,
            d_hat: x0_dist,
        }
    }

    fn values(&self, x: &Array1<f64>) -> (f64, f64) {
        (self.problem.inner.value(x), self.problem.outer.value(x))
    }

    /// Book-keeping shared by both solvers once `x_k` is known. Returns the
    /// function values at `x_k` when they were computed (None in fast runs
    /// without best-iterate windows, except at logged iterations).
    #[allow(clippy::too_many_arguments)]
    fn after_step(
        &mut self,
        k: usize,
        sigma: f64,
        t: f64,
        x: &Array1<f64>,
        ergodic: &mut Ergodic,
        s2_prev: f64,
    ) -> Option<(f64, f64)> {
        ergodic.push(x, sigma, t, s2_prev);
        if let (Some(r), Some(d)) = (self.reference, self.d_hat.as_mut()) {
            let dist = dist2(x, &r.x_star);
            if dist > *d {
                *d = dist;
            }
        }

        let should_log = match self.cfg.log {
            LogSchedule::EveryIteration => true,
            LogSchedule::Geometric => geometric_logging(k, &mut self.next_log, self.cfg.iterations),
        };

        let values = if self.track_values || should_log {
            Some(self.values(x))
        } else {
            None
        };

        if let Some((phi_v, omega_v)) = values {
            if self.track_values {
                self.per_iter.sigma.push(sigma);
                self.per_iter.t.push(t);
                self.per_iter.phi_value.push(phi_v);
                self.per_iter.omega_value.push(omega_v);
                if let Some(r) = self.reference {
                    for tracker in &mut self.kstar {
                        tracker.update(k, t, sigma, phi_v, omega_v, x, r);
                    }
                }
            }
            if should_log {
                let erg_x = ergodic.point();
                let (erg_phi, erg_omega) = self.values(&erg_x);
                self.logged.push(LoggedPoint {
                    k,
                    sigma,
                    t,
                    x: x.clone(),
                    phi_value: phi_v,
                    omega_value: omega_v,
                    ergodic_x: erg_x,
                    ergodic_phi_value: erg_phi,
                    ergodic_omega_value: erg_omega,
                });
            }
        }
        values
    }

    fn finish(self, x0: Array1<f64>, invariants: Vec<InvariantCheck>) -> SolverTrace {
        SolverTrace {
            config: self.cfg.clone(),
            x0,
            logged: self.logged,
            per_iteration: if self.track_values {
                Some(self.per_iter)
            } else {
                None
            },
            kstar: self.kstar.into_iter().filter_map(|t| t.best).collect(),
            invariants,
            x0_dist: self.x0_dist,
            d_hat: self.d_hat,
            reference: self.reference.cloned(),
        }
    }

    fn partial_failure(self, k: usize, x0: Array1<f64>, invariants: Vec<InvariantCheck>) -> Error {
        Error::NumericFailure {
            k,
            trace: Box::new(self.finish(x0, invariants)),
        }
    }
}

/// One proximal-gradient step per iteration on the regularized combination,
/// from the previous iterate.
pub fn ire_pg(
    problem: &BilevelProblem,
    cfg: &SolverConfig,
    x0: &Array1<f64>,
    reference: Option<&ReferenceSolution>,
) -> Result<SolverTrace> {
    preflight(problem, cfg, x0, reference, Algorithm::IrePg)?;
    let l1 = problem.l1();
    let l2 = problem.l2();
    let verify = cfg.mode == Mode::Verify;
    let mut common = RunCommon::new(problem, cfg, x0, reference);
    let mut ergodic = Ergodic::new(ErgodicRule::Pg, problem.dim);

    // Per-iteration inequality accumulators (verify mode only).
    let d0_sq = common.x0_dist.map(|d| d * d).unwrap_or(0.0);
    let mut inv_distance = InvariantAcc::new("distance_decrease", 1e-7 * (1.0 + d0_sq));
    let mut inv_suffdec = InvariantAcc::new("sufficient_decrease", 1e-9);
    let mut inv_monotone = InvariantAcc::new("composite_gap_monotone", 1e-9);

    let mut x = x0.clone();
    let (mut prev_phi_v, mut prev_omega_v) = if verify {
        common.values(&x)
    } else {
        (f64::NAN, f64::NAN)
    };

    for k in 1..=cfg.iterations {
        let sigma = common.schedule.sigma(k);
        let phik = problem.regularized(sigma)?;
        let stepped = match cfg.step_rule {
            StepRule::Constant => {
                let t = 1.0 / (l2 + sigma * l1);
                pg_step(phik.smooth.as_ref(), phik.nonsmooth.as_ref(), &x, t)
                    .map(|x_next| (t, x_next))
            }
            StepRule::Backtracking { gamma, t_bar } => backtrack(
                phik.smooth.as_ref(),
                phik.nonsmooth.as_ref(),
                &x,
                t_bar,
                gamma,
            ),
        };
        let (t, x_next) = match stepped {
            Ok(pair) if pair.1.iter().all(|v| v.is_finite()) => pair,
            Ok(_) | Err(Error::NonFinite(_)) => {
                let invariants = vec![
                    inv_distance.finish(),
                    inv_suffdec.finish(),
                    inv_monotone.finish(),
                ];
                return Err(common.partial_failure(k, x0.clone(), invariants));
            }
            Err(e) => return Err(e),
        };

        let values = common.after_step(k, sigma, t, &x_next, &mut ergodic, 0.0);

        if verify {
            let (phi_v, omega_v) = values.expect("verify mode tracks values");
            let r = common.reference.expect("verify mode has a reference");

            // Distance to the reference point cannot grow faster than the
            // value gaps allow.
            let lhs = dist2(&x_next, &r.x_star).powi(2);
            let rhs = dist2(&x, &r.x_star).powi(2)
                + 2.0 * sigma * t * (common.ref_omega - omega_v)
                + 2.0 * t * (common.ref_phi - phi_v);
            inv_distance.record(k, rhs - lhs);

            // One step decreases the regularized objective by at least the
            // squared move over 2t.
            let phik_prev = prev_phi_v + sigma * prev_omega_v;
            let phik_next = phi_v + sigma * omega_v;
            let move_sq = dist2(&x_next, &x).powi(2);
            let slack = (phik_prev - move_sq / (2.0 * t) - phik_next) / (1.0 + phik_prev.abs());
            inv_suffdec.record(k, slack);

            // The combined gap (phi - phi*) + sigma_{k+1} (omega - omega_lower)
            // is nonincreasing along the run.
            let sigma_next = common.schedule.sigma(k + 1);
            let v_prev = (prev_phi_v - r.phi_star) + sigma * (prev_omega_v - r.omega_lower);
            let v_cur = (phi_v - r.phi_star) + sigma_next * (omega_v - r.omega_lower);
            inv_monotone.record(k, v_prev - v_cur);

            prev_phi_v = phi_v;
            prev_omega_v = omega_v;
        }

        x = x_next;
    }

    let invariants = if verify {
        vec![
            inv_distance.finish(),
            inv_suffdec.finish(),
            inv_monotone.finish(),
        ]
    } else {
        Vec::new()
    };
    Ok(common.finish(x0.clone(), invariants))
}

/// The accelerated variant: proximal-gradient steps from a momentum point,
/// with the usual scalar sequence driving the extrapolation.
pub fn ire_apg(
    problem: &BilevelProblem,
    cfg: &SolverConfig,
    x0: &Array1<f64>,
    reference: Option<&ReferenceSolution>,
) -> Result<SolverTrace> {
    preflight(problem, cfg, x0, reference, Algorithm::IreApg)?;
    let l1 = problem.l1();
    let l2 = problem.l2();
    let verify = cfg.mode == Mode::Verify;
    let constant_rule = matches!(cfg.step_rule, StepRule::Constant);
    let mut common = RunCommon::new(problem, cfg, x0, reference);
    let rule = if constant_rule {
        ErgodicRule::ApgConstant
    } else {
        ErgodicRule::ApgBacktracking
    };
    let mut ergodic = Ergodic::new(rule, problem.dim);

    let d0_sq = common.x0_dist.map(|d| d * d).unwrap_or(0.0);
    let mut inv_momentum = InvariantAcc::new("momentum_value_inequality", 1e-7 * (1.0 + d0_sq));
    let mut inv_recursion = InvariantAcc::new("accumulated_recursion", 1e-7);

    let mut x_prev = x0.clone();
    let mut y = x0.clone();
    let mut seq = FistaSequence::new();
    let mut t_prev = match cfg.step_rule {
        StepRule::Backtracking { t_bar, .. } => t_bar,
        StepRule::Constant => f64::NAN,
    };

    // Accumulated right-hand side of the value recursion (constant rule):
    // running sum of s_{j-1}^2 z^j (sigma_{j+1} - sigma_j) over j < k plus
    // absolute magnitudes for a scale-aware tolerance.
    let base_rhs = 0.5 * (l1 + l2) * d0_sq;
    let mut recursion_sum = 0.0;
    let mut recursion_scale = base_rhs.abs();

    for k in 1..=cfg.iterations {
        let sigma = common.schedule.sigma(k);
        let phik = problem.regularized(sigma)?;
        let s_prev = seq.value(); // s_{k-1}
        let stepped = match cfg.step_rule {
            StepRule::Constant => {
                let t = 1.0 / (l2 + sigma * l1);
                pg_step(phik.smooth.as_ref(), phik.nonsmooth.as_ref(), &y, t)
                    .map(|x_next| (t, x_next))
            }
            StepRule::Backtracking { gamma, .. } => backtrack(
                phik.smooth.as_ref(),
                phik.nonsmooth.as_ref(),
                &y,
                t_prev,
                gamma,
            )
            .inspect(|(t, _)| t_prev = *t),
        };
        let (t, x_next) = match stepped {
            Ok(pair) if pair.1.iter().all(|v| v.is_finite()) => pair,
            Ok(_) | Err(Error::NonFinite(_)) => {
                let invariants = vec![inv_momentum.finish(), inv_recursion.finish()];
                return Err(common.partial_failure(k, x0.clone(), invariants));
            }
            Err(e) => return Err(e),
        };

        let values = common.after_step(k, sigma, t, &x_next, &mut ergodic, s_prev * s_prev);

        if verify {
            let (phi_v, omega_v) = values.expect("verify mode tracks values");
            let r = common.reference.expect("verify mode has a reference");

            // The accelerated step improves the regularized value at the
            // reference point by at least the distance change.
            let phik_ref = common.ref_phi + sigma * common.ref_omega;
            let phik_x = phi_v + sigma * omega_v;
            let lhs = t * (phik_ref - phik_x);
            let rhs = 0.5 * (dist2(&x_next, &r.x_star).powi(2) - dist2(&y, &r.x_star).powi(2));
            inv_momentum.record(k, (lhs - rhs) / (1.0 + d0_sq));

            if constant_rule {
                let s2_prev = s_prev * s_prev;
                let v_k = phi_v - common.ref_phi;
                let z_k = omega_v - common.ref_omega;
                // u^k = s_{k-1} x^k - (s_{k-1} - 1) x^{k-1} - x*
                let u = Array1::from_shape_fn(problem.dim, |i| {
                    s_prev * x_next[i] - (s_prev - 1.0) * x_prev[i] - r.x_star[i]
                });
                let lhs_rec = u.dot(&u) / (2.0 * t) + s2_prev * v_k;
                let rhs_rec = base_rhs + recursion_sum - sigma * s2_prev * z_k;
                let scale = 1.0 + recursion_scale + lhs_rec.abs();
                inv_recursion.record(k, (rhs_rec - lhs_rec) / scale);

                let sigma_next = common.schedule.sigma(k + 1);
                let term = s2_prev * z_k * (sigma_next - sigma);
                recursion_sum += term;
                recursion_scale += term.abs();
            }
        }

        let s_next = seq.advance();
        let momentum = (s_prev - 1.0) / s_next;
        y = Array1::from_shape_fn(problem.dim, |i| {
            x_next[i] + momentum * (x_next[i] - x_prev[i])
        });
        x_prev = x_next;
    }

    let invariants = if verify {
        if constant_rule {
            vec![inv_momentum.finish(), inv_recursion.finish()]
        } else {
            vec![inv_momentum.finish()]
        }
    } else {
        Vec::new()
    };
    Ok(common.finish(x0.clone(), invariants))
}

/// Plain accelerated minimization of a fixed composite, used by the
/// reference oracle. Constant step `1/L`, stops when the prox-gradient
/// mapping norm falls below `mapping_tol * (1 + ||x||)`.
pub struct FistaOutcome {
    pub x: Array1<f64>,
    pub iterations: usize,
    pub mapping_norm: f64,
}

pub fn fista_run(
    f: &dyn SmoothFn,
    g: &dyn NonsmoothFn,
    x0: &Array1<f64>,
    max_iterations: usize,
    mapping_tol: f64,
) -> Result<FistaOutcome> {
    let l = f.smoothness();
    if !(l > 0.0) {
        return Err(Error::InvalidConfig(
            "accelerated minimization needs a positive smoothness constant".into(),
        ));
    }
    let t = 1.0 / l;
    let mut x_prev = x0.clone();
    let mut y = x0.clone();
    let mut seq = FistaSequence::new();
    let mut iterations = 0;
    let mut mapping = f64::INFINITY;
    for k in 1..=max_iterations {
        let x_next = pg_step(f, g, &y, t)?;
        let s_prev = seq.value();
        let s_next = seq.advance();
        y = Array1::from_shape_fn(x0.len(), |i| {
            x_next[i] + ((s_prev - 1.0) / s_next) * (x_next[i] - x_prev[i])
        });
        x_prev = x_next;
        iterations = k;
        if k % 16 == 0 || k == max_iterations {
            mapping = gradient_mapping_norm(f, g, &x_prev, t)?;
            if mapping < mapping_tol * (1.0 + crate::linalg::norm2(&x_prev)) {
                break;
            }
        }
    }
    if !mapping.is_finite() {
        mapping = gradient_mapping_norm(f, g, &x_prev, t)?;
    }
    Ok(FistaOutcome {
        x: x_prev,
        iterations,
        mapping_norm: mapping,
    })
}

/// One explicit rate-bound comparison at a logged iteration.
#[derive(Debug, Clone)]
pub struct BoundCheckResult {
    pub name: String,
    pub k: usize,
    pub gap: f64,
    pub bound: f64,
    /// `bound - gap`, so nonnegative means pass.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct RateBoundReport {
    pub checks: Vec<BoundCheckResult>,
    pub notes: Vec<String>,
    pub pass: bool,
}

impl RateBoundReport {
    pub fn worst(&self) -> Option<&BoundCheckResult> {
        self.checks
            .iter()
            .min_by(|a, b| a.margin.partial_cmp(&b.margin).unwrap())
    }

    pub fn named<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a BoundCheckResult> {
        self.checks
            .iter()
            .filter(move |c| c.name.starts_with(prefix))
    }
}

const BOUND_REL_TOL: f64 = 1e-7;

fn push_check(checks: &mut Vec<BoundCheckResult>, name: &str, k: usize, gap: f64, bound: f64) {
    let margin = bound - gap;
    let pass = gap <= bound + BOUND_REL_TOL * bound.abs();
    checks.push(BoundCheckResult {
        name: name.to_string(),
        k,
        gap,
        bound,
        margin,
        pass,
    });
}

/// Evaluates the explicit convergence-rate bounds against every logged point
/// (and every best-iterate window) of a trace, using the reference optima,
/// the measured start distance, and the declared smoothness constants.
pub fn check_rate_bounds(problem: &BilevelProblem, trace: &SolverTrace) -> Result<RateBoundReport> {
    let r = trace
        .reference
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("rate bounds need a reference solution".into()))?;
    let d0 = trace
        .x0_dist
        .ok_or_else(|| Error::InvalidConfig("rate bounds need the start distance".into()))?;
    let d0_sq = d0 * d0;
    let d_hat_sq = trace.d_hat.map(|d| d * d).unwrap_or(d0_sq);
    let delta_omega = r.delta_omega();
    let l1 = problem.l1();
    let l2 = problem.l2();
    let beta = trace.config.beta;
    let mut checks = Vec::new();
    let mut notes = Vec::new();
    if !r.confident {
        notes.push(
            "reference solution is low-confidence; failed bounds are advisory only".to_string(),
        );
    }

    match trace.config.algorithm {
        Algorithm::IrePg => {
            // Ergodic bounds.
            let (alpha1, alpha2) = match trace.config.step_rule {
                StepRule::Constant => (l1 + l2, 1.0),
                StepRule::Backtracking { gamma, t_bar } => (
                    l1 / gamma + (1.0 / t_bar).max(l2 / gamma),
                    t_bar * l1 + (t_bar * l2).max(1.0),
                ),
            };
            for p in &trace.logged {
                let kf = p.k as f64;
                let outer_bound = 0.5 * d0_sq * alpha1 / kf.powf(1.0 - beta);
                push_check(
                    &mut checks,
                    "pg_ergodic_outer",
                    p.k,
                    p.ergodic_omega_value - r.omega_star,
                    outer_bound,
                );
                let inner_tail = if beta < 0.5 {
                    alpha2 / (kf.powf(beta) * (1.0 - 2.0 * beta))
                } else if beta == 0.5 {
                    alpha2 * (1.0 + kf.ln()) / kf.sqrt()
                } else {
                    2.0 * beta * alpha2 / (kf.powf(1.0 - beta) * (2.0 * beta - 1.0))
                };
                push_check(
                    &mut checks,
                    "pg_ergodic_inner",
                    p.k,
                    p.ergodic_phi_value - r.phi_star,
                    outer_bound + delta_omega * inner_tail,
                );
            }
            // Best-iterate bounds.
            let (b_alpha1, b_alpha2) = match trace.config.step_rule {
                StepRule::Constant => (l1 + l2, l1 + l2),
                StepRule::Backtracking { gamma, t_bar } => {
                    let a = (1.0 / t_bar).max((l1 + l2) / gamma);
                    (a, a)
                }
            };
            for best in &trace.kstar {
                let kf = best.window as f64;
                push_check(
                    &mut checks,
                    "pg_best_outer",
                    best.window,
                    best.omega_value - r.omega_star,
                    d_hat_sq * b_alpha1 / kf.powf(1.0 - beta),
                );
                push_check(
                    &mut checks,
                    "pg_best_inner",
                    best.window,
                    best.phi_value - r.phi_star,
                    d_hat_sq * b_alpha2 / (2.0 * kf) + delta_omega / kf.powf(beta),
                );
            }
        }
        Algorithm::IreApg => {
            // Per-iterate inner bound.
            let (a1, a2) = match trace.config.step_rule {
                StepRule::Constant => (l1 + l2, 2.0),
                StepRule::Backtracking { gamma, t_bar } => {
                    let a1 = ((l1 + l2) / gamma).max(1.0 / t_bar);
                    (a1, a1 * t_bar)
                }
            };
            let (a3, a4) = if beta < 2.0 {
                (1.0 / (2.0 - beta), 0.0)
            } else {
                (1.0, 1.0)
            };
            for p in &trace.logged {
                let kf = p.k as f64;
                let bound = 2.0 * a1 * d0_sq / (kf + 1.0).powi(2)
                    + 4.0 * a2 * (a3 + a4 * kf.ln()) * delta_omega / (kf + 1.0).powf(beta);
                push_check(
                    &mut checks,
                    "apg_iterate_inner",
                    p.k,
                    p.phi_value - r.phi_star,
                    bound,
                );
            }
            // Ergodic bounds.
            let (ta1, ta2, ta3, ta4) = match trace.config.step_rule {
                StepRule::Constant => {
                    let ta1 = l1 + l2;
                    let ta2 = if beta < 2.0 {
                        2.0 * (l1 + l2) * d0_sq + 8.0 * delta_omega / (2.0 - beta)
                    } else {
                        f64::NAN
                    };
                    let ta3 = 2.0 * (l1 + l2) * d0_sq + 8.0 * delta_omega;
                    let ta4 = 8.0 * delta_omega;
                    (ta1, ta2, ta3, ta4)
                }
                StepRule::Backtracking { gamma, t_bar } => {
                    let ta1 = ((l1 + l2) / gamma).max(1.0 / t_bar);
                    let ta2 = if beta < 2.0 {
                        2.0 * ta1 * ta1 * t_bar * (d0_sq + 2.0 * t_bar * delta_omega / (2.0 - beta))
                    } else {
                        f64::NAN
                    };
                    let ta3 = 2.0 * ta1 * ta1 * t_bar * (d0_sq + 2.0 * t_bar * delta_omega);
                    let ta4 = 4.0 * (ta1 * ta1 * t_bar).powi(2) * delta_omega;
                    (ta1, ta2, ta3, ta4)
                }
            };
            for p in &trace.logged {
                let kf = p.k as f64;
                let outer_bound = if beta < 2.0 {
                    2.0 * ta1 * d0_sq / kf.powf(2.0 - beta)
                } else {
                    ta1 * d0_sq / (kf + 1.0).ln()
                };
                push_check(
                    &mut checks,
                    "apg_ergodic_outer",
                    p.k,
                    p.ergodic_omega_value - r.omega_star,
                    outer_bound,
                );
                let inner_bound = if beta < 1.0 {
                    16.0 * ta2 / ((1.0 - beta) * kf.powf(beta))
                } else if beta == 1.0 {
                    8.0 * ta2 * (1.0 + kf.ln()) / kf
                } else if beta < 2.0 {
                    4.0 * (2.0 * beta - 1.0) * ta2 / ((beta - 1.0) * kf.powf(2.0 - beta))
                } else {
                    2.0 * (4.0 * ta3 + ta4) / (kf + 1.0).ln()
                };
                push_check(
                    &mut checks,
                    "apg_ergodic_inner",
                    p.k,
                    p.ergodic_phi_value - r.phi_star,
                    inner_bound,
                );
            }
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(RateBoundReport {
        checks,
        notes,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RegularizationSchedule;
    use crate::oracle::{Composite, SquaredDistance, Zero};
    use ndarray::array;
    use std::sync::Arc;

    fn quadratic_problem(center: Array1<f64>, outer_center: Array1<f64>) -> BilevelProblem {
        let dim = center.len();
        let inner = Composite::new(Arc::new(SquaredDistance::new(center, 1.0)), Arc::new(Zero));
        let outer = Composite::new(
            Arc::new(SquaredDistance::new(outer_center, 1.0)),
            Arc::new(Zero),
        );
        BilevelProblem::with_smooth_outer(dim, inner, outer).unwrap()
    }

    fn zero_outer_problem(center: Array1<f64>) -> BilevelProblem {
        let dim = center.len();
        let inner = Composite::new(Arc::new(SquaredDistance::new(center, 1.0)), Arc::new(Zero));
        let outer = Composite::new(Arc::new(Zero), Arc::new(Zero));
        BilevelProblem::with_smooth_outer(dim, inner, outer).unwrap()
    }

    #[test]
    fn momentum_scalars_stay_between_the_stated_envelopes() {
        let mut seq = FistaSequence::new();
        for k in 0..=1_000_000usize {
            let s = seq.value();
            let kf = k as f64;
            assert!(s >= (kf + 2.0) / 2.0, "lower envelope fails at k={k}");
            assert!(s <= kf + 1.0, "upper envelope fails at k={k}");
            seq.advance();
        }
    }

    #[test]
    fn zero_outer_reduces_to_proximal_gradient() {
        // With a vanished outer function the regularization has no effect
        // and a unit step lands on the minimizer immediately.
        let c = array![1.0, -2.0, 0.5];
        let p = zero_outer_problem(c.clone());
        let cfg = SolverConfig::new(Algorithm::IrePg, 0.5, StepRule::Constant, 50);
        let trace = solve(&p, &cfg, &Array1::zeros(3), None).unwrap();
        let last = trace.final_point();
        assert!(dist2(&last.x, &c) < 1e-12);
    }

    #[test]
    fn toy_bilevel_converges_to_inner_solution_set() {
        // Inner solution set is the origin; the outer pull toward e1 fades
        // with the schedule, so the iterates approach the origin.
        let p = quadratic_problem(array![0.0, 0.0], array![1.0, 0.0]);
        let cfg = SolverConfig::new(Algorithm::IrePg, 0.5, StepRule::Constant, 100_000);
        let trace = solve(&p, &cfg, &array![0.0, 0.0], None).unwrap();
        let last = trace.final_point();
        assert!(
            crate::linalg::norm2(&last.x) <= 1e-2,
            "|x_K| = {}",
            crate::linalg::norm2(&last.x)
        );
    }

    #[test]
    fn zero_outer_accelerated_obeys_the_classical_envelope() {
        let c = array![2.0, -1.0, 0.25, 4.0];
        let p = zero_outer_problem(c.clone());
        let cfg = SolverConfig::new(Algorithm::IreApg, 1.0, StepRule::Constant, 4096)
            .log_every_iteration();
        let x0 = Array1::zeros(4);
        let trace = solve(&p, &cfg, &x0, None).unwrap();
        let l = p.l2();
        let d0 = dist2(&x0, &c);
        for pt in &trace.logged {
            let gap = pt.phi_value; // minimum value is zero
            let envelope = 2.0 * l * d0 * d0 / ((pt.k as f64 + 1.0).powi(2));
            assert!(
                gap <= envelope + 1e-12,
                "k={}: gap {gap} above envelope {envelope}",
                pt.k
            );
        }
    }

    #[test]
    fn traces_are_bit_identical_across_runs() {
        let p = quadratic_problem(array![0.0, 0.0], array![1.0, 0.0]);
        for algorithm in [Algorithm::IrePg, Algorithm::IreApg] {
            let cfg = SolverConfig::new(
                algorithm,
                0.7,
                StepRule::Backtracking {
                    gamma: 0.5,
                    t_bar: 2.0,
                },
                500,
            );
            let a = solve(&p, &cfg, &array![0.3, 0.4], None).unwrap();
            let b = solve(&p, &cfg, &array![0.3, 0.4], None).unwrap();
            assert_eq!(a.logged.len(), b.logged.len());
            for (pa, pb) in a.logged.iter().zip(b.logged.iter()) {
                assert_eq!(pa.x, pb.x);
                assert_eq!(pa.t, pb.t);
                assert_eq!(pa.ergodic_x, pb.ergodic_x);
            }
        }
    }

    #[test]
    fn beta_ranges_are_enforced() {
        let p = quadratic_problem(array![0.0], array![1.0]);
        let bad_pg = SolverConfig::new(Algorithm::IrePg, 1.0, StepRule::Constant, 10);
        assert!(solve(&p, &bad_pg, &array![0.0], None).is_err());
        let bad_apg = SolverConfig::new(Algorithm::IreApg, 2.5, StepRule::Constant, 10);
        assert!(solve(&p, &bad_apg, &array![0.0], None).is_err());
        let ok_apg = SolverConfig::new(Algorithm::IreApg, 2.0, StepRule::Constant, 10);
        assert!(solve(&p, &ok_apg, &array![0.0], None).is_ok());
    }

    #[test]
    fn missing_joint_prox_is_rejected() {
        let inner = Composite::new(
            Arc::new(SquaredDistance::new(array![0.0], 1.0)),
            Arc::new(Zero),
        );
        let outer = Composite::new(Arc::new(Zero), Arc::new(crate::oracle::L1Norm::new(1.0)));
        let p = BilevelProblem::new(1, inner, outer, None).unwrap();
        let cfg = SolverConfig::new(Algorithm::IrePg, 0.5, StepRule::Constant, 10);
        assert!(matches!(
            solve(&p, &cfg, &array![0.0], None),
            Err(Error::MissingJointProx)
        ));
    }

    #[test]
    fn numeric_failure_aborts_with_partial_trace() {
        struct Exploding;
        impl SmoothFn for Exploding {
            fn value(&self, x: &Array1<f64>) -> f64 {
                0.5 * x.dot(x)
            }
            fn gradient(&self, x: &Array1<f64>) -> Array1<f64> {
                // Blows up after the iterate leaves the start.
                if crate::linalg::norm2(x) > 1.0 {
                    x.mapv(|_| f64::NAN)
                } else {
                    x.mapv(|v| v - 10.0)
                }
            }
            fn smoothness(&self) -> f64 {
                1.0
            }
        }
        let inner = Composite::new(Arc::new(Exploding), Arc::new(Zero));
        let outer = Composite::new(Arc::new(Zero), Arc::new(Zero));
        let p = BilevelProblem::with_smooth_outer(1, inner, outer).unwrap();
        let cfg = SolverConfig::new(Algorithm::IrePg, 0.5, StepRule::Constant, 100);
        match solve(&p, &cfg, &array![0.0], None) {
            Err(Error::NumericFailure { k, .. }) => assert!(k >= 2),
            other => panic!("expected numeric failure, got {other:?}"),
        }
    }

    #[test]
    fn step_sizes_follow_the_rules() {
        let p = quadratic_problem(array![0.0, 0.0], array![1.0, 1.0]);
        let schedule = RegularizationSchedule::new(0.4);
        let cfg = SolverConfig::new(Algorithm::IrePg, 0.4, StepRule::Constant, 64);
        let trace = solve(&p, &cfg, &array![1.0, 1.0], None).unwrap();
        for pt in &trace.logged {
            let expected = 1.0 / (p.l2() + schedule.sigma(pt.k) * p.l1());
            assert_eq!(pt.t, expected);
        }
        let cfg = SolverConfig::new(
            Algorithm::IrePg,
            0.4,
            StepRule::Backtracking {
                gamma: 0.5,
                t_bar: 3.0,
            },
            64,
        );
        let trace = solve(&p, &cfg, &array![1.0, 1.0], None).unwrap();
        let floor = (0.5 / (p.l2() + p.l1())).min(3.0);
        for pt in &trace.logged {
            assert!(pt.t >= floor && pt.t <= 3.0);
        }
        // Warm-started accelerated backtracking is nonincreasing.
        let cfg = SolverConfig::new(
            Algorithm::IreApg,
            1.0,
            StepRule::Backtracking {
                gamma: 0.5,
                t_bar: 3.0,
            },
            256,
        )
        .log_every_iteration();
        let trace = solve(&p, &cfg, &array![1.0, 1.0], None).unwrap();
        let mut prev = f64::INFINITY;
        for pt in &trace.logged {
            assert!(pt.t <= prev);
            prev = pt.t;
        }
    }

    #[test]
    fn single_iteration_ergodic_point_is_the_iterate() {
        let p = quadratic_problem(array![0.0, 0.0], array![1.0, 0.0]);
        for algorithm in [Algorithm::IrePg, Algorithm::IreApg] {
            let cfg = SolverConfig::new(algorithm, 0.5, StepRule::Constant, 1);
            let trace = solve(&p, &cfg, &array![0.5, -0.5], None).unwrap();
            let pt = trace.final_point();
            assert_eq!(pt.k, 1);
            assert!(dist2(&pt.ergodic_x, &pt.x) < 1e-15);
        }
    }

    #[test]
    fn accelerated_ergodic_weights_match_direct_summation() {
        // Reconstruct the total ergodic weight from the momentum scalars and
        // schedule and compare with the incremental accumulation; also check
        // the lower envelope K^(2-beta)/4 for the constant rule.
        for beta in [0.5, 1.0, 1.5] {
            let p = quadratic_problem(array![0.0, 0.0], array![1.0, 0.0]);
            let cfg = SolverConfig::new(Algorithm::IreApg, beta, StepRule::Constant, 200)
                .log_every_iteration();
            let trace = solve(&p, &cfg, &array![1.0, 0.0], None).unwrap();
            let schedule = RegularizationSchedule::new(beta);
            let mut seq = FistaSequence::new();
            let mut s2 = Vec::new(); // s_{k-1}^2 for k = 1..
            for _ in 0..200 {
                let s = seq.value();
                s2.push(s * s);
                seq.advance();
            }
            for pt in trace.logged.iter() {
                let big_k = pt.k;
                let mut total = 0.0;
                for k in 1..big_k {
                    total += s2[k - 1] * (schedule.sigma(k) - schedule.sigma(k + 1));
                }
                total += schedule.sigma(big_k) * s2[big_k - 1];
                // Rebuild the ergodic point from scratch.
                let mut sum = Array1::<f64>::zeros(2);
                let mut iterates = Vec::new();
                let full = solve(
                    &p,
                    &SolverConfig::new(Algorithm::IreApg, beta, StepRule::Constant, big_k)
                        .log_every_iteration(),
                    &array![1.0, 0.0],
                    None,
                )
                .unwrap();
                for q in &full.logged {
                    iterates.push(q.x.clone());
                }
                for k in 1..big_k {
                    let w = s2[k - 1] * (schedule.sigma(k) - schedule.sigma(k + 1));
                    assert!(w > 0.0, "weights must stay positive");
                    sum.scaled_add(w, &iterates[k - 1]);
                }
                sum.scaled_add(schedule.sigma(big_k) * s2[big_k - 1], &iterates[big_k - 1]);
                sum.mapv_inplace(|v| v / total);
                assert!(
                    dist2(&sum, &pt.ergodic_x) <= 1e-12 * (1.0 + crate::linalg::norm2(&sum)),
                    "beta={beta} K={big_k}"
                );
                if beta < 2.0 {
                    let kf = big_k as f64;
                    assert!(total >= kf.powf(2.0 - beta) / 4.0);
                }
            }
        }
    }

    #[test]
    fn best_iterate_prefers_smallest_index_on_ties() {
        // Starting at the common minimizer pins every iterate there, so the
        // criterion ties at zero and the winner must be K + 1.
        let p = quadratic_problem(array![1.0, 1.0], array![1.0, 1.0]);
        let reference = ReferenceSolution::exact(array![1.0, 1.0], 0.0, 0.0, 0.0);
        let cfg = SolverConfig::new(Algorithm::IrePg, 0.5, StepRule::Constant, 20)
            .with_kstar_windows(&[5]);
        let trace = solve(&p, &cfg, &array![1.0, 1.0], Some(&reference)).unwrap();
        let best = best_iterate(&trace, 5).unwrap();
        assert_eq!(best.k_star, 6);
        assert!(best_iterate(&trace, 7).is_err());
    }

    #[test]
    fn best_iterate_finds_a_strict_minimum_at_the_window_end() {
        // Strictly decreasing inner values put the best iterate at 2K.
        let p = zero_outer_problem(array![3.0, -3.0]);
        let reference = ReferenceSolution::exact(array![3.0, -3.0], 0.0, 0.0, 0.0);
        let cfg = SolverConfig::new(
            Algorithm::IrePg,
            0.9,
            StepRule::Backtracking {
                gamma: 0.5,
                t_bar: 0.01,
            },
            16,
        )
        .with_kstar_windows(&[8]);
        let trace = solve(&p, &cfg, &Array1::zeros(2), Some(&reference)).unwrap();
        let best = best_iterate(&trace, 8).unwrap();
        assert_eq!(best.k_star, 16);
    }

    #[test]
    fn verify_mode_passes_on_a_toy_problem() {
        let p = quadratic_problem(array![0.0, 0.0], array![1.0, 0.0]);
        let reference = ReferenceSolution::exact(array![0.0, 0.0], 0.0, 0.5, 0.0);
        for algorithm in [Algorithm::IrePg, Algorithm::IreApg] {
            for rule in [
                StepRule::Constant,
                StepRule::Backtracking {
                    gamma: 0.5,
                    t_bar: 1.0,
                },
            ] {
                let cfg = SolverConfig::new(algorithm, 0.5, rule, 2000).verify();
                let trace = solve(&p, &cfg, &array![0.7, -0.2], Some(&reference)).unwrap();
                assert!(
                    trace.invariants_pass(),
                    "{algorithm:?} {rule:?}: {:?}",
                    trace.invariants
                );
                let report = check_rate_bounds(&p, &trace).unwrap();
                assert!(report.pass, "worst = {:?}", report.worst());
            }
        }
    }
}
