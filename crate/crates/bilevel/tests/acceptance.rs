//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! The heavy fixtures (instance, reference oracle, solver sweeps) are shared
//! through `OnceLock`s so parallel test threads compute each only once.

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array1;

use bilevel::experiments::{
    gen_instance, reference_solve, Instance, InstanceSpec, ReferenceOptions, ReferenceSolution,
};
use bilevel::linalg::{dist2, norm2};
use bilevel::model::validate;
use bilevel::oracle::prox_box;
use bilevel::series::sum_bound_check;
use bilevel::solver::{
    best_iterate, check_rate_bounds, solve, Algorithm, FistaSequence, SolverConfig, SolverTrace,
    StepRule,
};
use bilevel::surrogate::LiftedProblem;

const SEED: u64 = 7;
const TAU: f64 = 0.1;
const N: usize = 50;

fn spec_with_rho(rho: f64) -> InstanceSpec {
    InstanceSpec {
        n: N,
        tau: TAU,
        seed: SEED,
        rho,
    }
}

struct Base {
    inst: Instance,
    lifted: LiftedProblem,
    reference: ReferenceSolution,
    lifted_ref: ReferenceSolution,
}

fn base() -> &'static Base {
    static BASE: OnceLock<Base> = OnceLock::new();
    BASE.get_or_init(|| {
        let inst = gen_instance(&spec_with_rho(1.0)).expect("instance");
        let lifted = inst.lift().expect("lifting");
        let reference = reference_solve(&inst, &ReferenceOptions::default()).expect("reference");
        let lifted_ref = lifted.lift_reference(&reference);
        Base {
            inst,
            lifted,
            reference,
            lifted_ref,
        }
    })
}

fn start_point(lifted: &LiftedProblem) -> Array1<f64> {
    lifted.lift_point(&Array1::zeros(N))
}

struct TimedRun {
    beta: f64,
    rule: StepRule,
    trace: SolverTrace,
    seconds: f64,
}

fn run_cell(
    lifted: &LiftedProblem,
    reference: &ReferenceSolution,
    algorithm: Algorithm,
    beta: f64,
    rule: StepRule,
    iterations: usize,
    verify: bool,
    windows: &[usize],
) -> TimedRun {
    let mut cfg = SolverConfig::new(algorithm, beta, rule, iterations).with_kstar_windows(windows);
    if verify {
        cfg = cfg.verify();
    }
    let w0 = start_point(lifted);
    let started = Instant::now();
    let trace = solve(&lifted.lifted, &cfg, &w0, Some(reference)).expect("solver run");
    TimedRun {
        beta,
        rule,
        trace,
        seconds: started.elapsed().as_secs_f64(),
    }
}

const BT: StepRule = StepRule::Backtracking {
    gamma: 0.5,
    t_bar: 1.0,
};

/// Criterion 5/6 cells: plain solver, beta x step rule, verify mode, 10^4
/// iterations, with a best-iterate window for the ordering checks.
fn pg_cells() -> &'static Vec<TimedRun> {
    static CELLS: OnceLock<Vec<TimedRun>> = OnceLock::new();
    CELLS.get_or_init(|| {
        let b = base();
        let mut cells = Vec::new();
        for beta in [0.3, 0.5, 0.7] {
            for rule in [StepRule::Constant, BT] {
                cells.push(run_cell(
                    &b.lifted,
                    &b.lifted_ref,
                    Algorithm::IrePg,
                    beta,
                    rule,
                    10_000,
                    true,
                    &[5000],
                ));
            }
        }
        cells
    })
}

/// Criterion 8 cells: accelerated solver, beta grid x step rule, verify
/// mode, 10^4 iterations.
fn apg_cells() -> &'static Vec<TimedRun> {
    static CELLS: OnceLock<Vec<TimedRun>> = OnceLock::new();
    CELLS.get_or_init(|| {
        let b = base();
        let mut cells = Vec::new();
        for beta in [0.5, 1.0, 1.5, 2.0] {
            for rule in [StepRule::Constant, BT] {
                cells.push(run_cell(
                    &b.lifted,
                    &b.lifted_ref,
                    Algorithm::IreApg,
                    beta,
                    rule,
                    10_000,
                    true,
                    &[],
                ));
            }
        }
        cells
    })
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "[{}] criterion {criterion}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

#[test]
fn criterion_01_oracle_self_consistency_suite() {
    let b = base();
    let started = Instant::now();
    let probes = 1000;
    let lifted_report = validate(&b.lifted.lifted, probes);
    let base_report = validate(&b.inst.problem, probes);
    let elapsed = started.elapsed().as_secs_f64();
    let pass = lifted_report.pass && base_report.pass && elapsed < 10.0;
    report(
        "1",
        pass,
        &format!(
            "gradient/descent/second-prox/nonexpansiveness on {probes} probes per oracle ({} + {} checks) in {elapsed:.2}s",
            lifted_report.checks.len(),
            base_report.checks.len(),
        ),
    );
}

#[test]
fn criterion_02_momentum_scalar_envelopes() {
    let mut seq = FistaSequence::new();
    let mut worst_low = f64::INFINITY;
    let mut worst_high = f64::INFINITY;
    for k in 0..=1_000_000usize {
        let s = seq.value();
        let kf = k as f64;
        worst_low = worst_low.min(s - (kf + 2.0) / 2.0);
        worst_high = worst_high.min(kf + 1.0 - s);
        seq.advance();
    }
    let pass = worst_low >= 0.0 && worst_high >= 0.0;
    report(
        "2",
        pass,
        &format!(
            "(k+2)/2 <= s_k <= k+1 up to k=10^6 (worst slacks {worst_low:.3e}, {worst_high:.3e})"
        ),
    );
}

#[test]
fn criterion_03_partial_sum_bounds() {
    let mut all = true;
    let mut count = 0;
    for i in 0..=16 {
        let beta = 0.25 * i as f64;
        for k in [1usize, 10, 100, 1000, 100_000] {
            let r = sum_bound_check(beta, k);
            all &= r.pass;
            count += 1;
            assert!(r.pass, "bounds fail at beta={beta}, K={k}: {r:?}");
        }
    }
    report(
        "3",
        all,
        &format!("upper, lower, and log-weighted sum bounds by direct summation over {count} (beta, K) pairs"),
    );
}

#[test]
fn criterion_04_joint_prox_limit() {
    // 1-D box indicator plus sigma * |.|: the joint prox (by dense grid
    // search at resolution 1e-5) converges monotonically to the box prox as
    // sigma drops to 1e-6.
    let resolution = 1e-5;
    let lo = Array1::from_elem(1, -1.0);
    let hi = Array1::from_elem(1, 1.0);
    let sigmas = [1.0, 0.1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let grid_prox = |x: f64, sigma: f64| -> f64 {
        let mut best = (f64::INFINITY, -1.0);
        let steps = (2.0 / resolution) as usize;
        for i in 0..=steps {
            let u = -1.0 + i as f64 * resolution;
            let obj = sigma * u.abs() + 0.5 * (u - x) * (u - x);
            if obj < best.0 {
                best = (obj, u);
            }
        }
        best.1
    };
    let mut pass = true;
    let mut worst_final: f64 = 0.0;
    let mut x = -2.0;
    while x <= 2.0 {
        let limit = prox_box(&Array1::from_elem(1, x), &lo, &hi).unwrap()[0];
        let mut prev = f64::INFINITY;
        for (i, &sigma) in sigmas.iter().enumerate() {
            let d = (grid_prox(x, sigma) - limit).abs();
            if d > prev + 2.0 * resolution {
                pass = false;
            }
            prev = d;
            if i == sigmas.len() - 1 {
                worst_final = worst_final.max(d);
                if d >= 1e-4 {
                    pass = false;
                }
            }
        }
        x += 0.1;
    }
    report(
        "4",
        pass,
        &format!("joint prox approaches the box prox monotonically; worst terminal distance {worst_final:.2e} < 1e-4"),
    );
}

#[test]
fn criterion_05_trajectory_invariants() {
    let b = base();
    let d0_sq = dist2(&start_point(&b.lifted), &b.lifted_ref.x_star).powi(2);
    let slack_floor = -1e-7 * (1.0 + d0_sq);
    let mut pass = true;
    let mut detail = String::new();
    for cell in pg_cells() {
        let dist = cell.trace.invariant("distance_decrease").expect("checked");
        let mono = cell
            .trace
            .invariant("composite_gap_monotone")
            .expect("checked");
        let dec = cell
            .trace
            .invariant("sufficient_decrease")
            .expect("checked");
        let cell_ok = dist.worst_slack >= slack_floor
            && mono.worst_slack >= slack_floor
            && dec.pass
            && cell.seconds < 120.0;
        if !cell_ok {
            pass = false;
            detail.push_str(&format!(
                " [beta={} {:?}: dist {:.2e} mono {:.2e} dec_pass={} {:.0}s]",
                cell.beta, cell.rule, dist.worst_slack, mono.worst_slack, dec.pass, cell.seconds
            ));
        }
    }
    report(
        "5",
        pass,
        &format!(
            "per-iteration distance and combined-gap inequalities over 6 cells x 10^4 iterations, slack floor {slack_floor:.2e}{detail}"
        ),
    );
}

#[test]
fn criterion_06_ergodic_rate_bounds() {
    let b = base();
    let mut pass = b.reference.confident
        && b.reference.achieved_tol <= 1e-8 * (1.0 + norm2(&b.reference.x_star));
    let mut worst = f64::INFINITY;
    for cell in pg_cells() {
        let rep = check_rate_bounds(&b.lifted.lifted, &cell.trace).expect("bounds");
        for c in rep
            .checks
            .iter()
            .filter(|c| c.name.starts_with("pg_ergodic"))
        {
            pass &= c.pass;
            worst = worst.min(c.margin);
        }
    }
    report(
        "6",
        pass,
        &format!("ergodic outer and inner bounds at every logged K over 6 cells (worst margin {worst:.3e})"),
    );
}

#[test]
fn criterion_07_best_iterate_bounds_and_slopes() {
    let b = base();
    let beta = 2.0 / 3.0;
    let windows = [
        100usize, 200, 400, 800, 1000, 1600, 3200, 5000, 6400, 12_800, 25_600, 50_000,
    ];
    let stated = [100usize, 1000, 5000];
    let mut pass = true;
    let mut detail = String::new();
    for rule in [StepRule::Constant, BT] {
        let cell = run_cell(
            &b.lifted,
            &b.lifted_ref,
            Algorithm::IrePg,
            beta,
            rule,
            100_000,
            false,
            &windows,
        );
        let rep = check_rate_bounds(&b.lifted.lifted, &cell.trace).expect("bounds");
        // Displayed best-iterate bounds at the stated windows.
        for &w in &stated {
            for tag in ["pg_best_outer", "pg_best_inner"] {
                let c = rep
                    .checks
                    .iter()
                    .find(|c| c.name == tag && c.k == w)
                    .expect("window checked");
                if !c.pass {
                    pass = false;
                    detail.push_str(&format!(" [{tag}@{w} margin {:.2e}]", c.margin));
                }
            }
        }
        // Observed decay of the best-iterate sequence, measured on the
        // quantities the translated guarantee actually bounds: the original
        // inner value at the x block and the original (composed) outer
        // value at the x block. Nonpositive gaps mean the sequence already
        // converged past the target and are excluded from the fit.
        let inner_pts: Vec<(usize, f64)> = windows
            .iter()
            .map(|&w| {
                let best = best_iterate(&cell.trace, w).expect("window");
                (w, b.lifted.original_phi(&best.x) - b.reference.phi_star)
            })
            .collect();
        let outer_pts: Vec<(usize, f64)> = windows
            .iter()
            .map(|&w| {
                let best = best_iterate(&cell.trace, w).expect("window");
                (w, b.lifted.original_omega(&best.x) - b.reference.omega_star)
            })
            .collect();
        let inner_slope = fit_slope(&inner_pts);
        let outer_slope = fit_slope(&outer_pts);
        let inner_ok = match inner_slope {
            Some(s) => s <= -beta + 0.15,
            None => inner_pts.iter().filter(|(_, g)| *g > 0.0).count() < 5,
        };
        let outer_ok = match outer_slope {
            Some(s) => s <= -(1.0 - beta) + 0.15,
            None => outer_pts.iter().filter(|(_, g)| *g > 0.0).count() < 5,
        };
        if !(inner_ok && outer_ok) {
            pass = false;
        }
        detail.push_str(&format!(
            " [{rule:?}: inner slope {inner_slope:?} (need <= {:.3}), outer slope {outer_slope:?} (need <= {:.3})]",
            -beta + 0.15,
            -(1.0 - beta) + 0.15
        ));
    }
    report(
        "7",
        pass,
        &format!("best-iterate bounds at K in {{100, 10^3, 5x10^3}} and decay slopes{detail}"),
    );
}

fn fit_slope(points: &[(usize, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, g)| g.is_finite() && *g > 0.0)
        .map(|(k, g)| ((*k as f64).ln(), g.ln()))
        .collect();
    if usable.len() < 5 {
        return None;
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|(x, _)| x).sum::<f64>() / n;
    let my = usable.iter().map(|(_, y)| y).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = usable.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

#[test]
fn criterion_08_accelerated_bounds() {
    let b = base();
    let mut pass = true;
    let mut worst = f64::INFINITY;
    let mut detail = String::new();
    for cell in apg_cells() {
        let rep = check_rate_bounds(&b.lifted.lifted, &cell.trace).expect("bounds");
        for c in &rep.checks {
            pass &= c.pass;
            worst = worst.min(c.margin);
            if !c.pass {
                detail.push_str(&format!(
                    " [beta={} {:?} {}@{}: margin {:.2e}]",
                    cell.beta, cell.rule, c.name, c.k, c.margin
                ));
            }
        }
        if matches!(cell.rule, StepRule::Constant) {
            let rec = cell
                .trace
                .invariant("accumulated_recursion")
                .expect("constant-rule cells check the value recursion");
            if !rec.pass {
                pass = false;
                detail.push_str(&format!(
                    " [beta={} recursion slack {:.2e}]",
                    cell.beta, rec.worst_slack
                ));
            }
        }
        // The momentum-step value inequality holds for both rules.
        let momentum = cell
            .trace
            .invariant("momentum_value_inequality")
            .expect("verify mode");
        pass &= momentum.pass;
    }
    report(
        "8",
        pass,
        &format!(
            "per-iterate inner bound, ergodic bounds, and accumulated value recursion over 8 cells (worst bound margin {worst:.3e}){detail}"
        ),
    );
}

#[test]
fn criterion_09_tradeoff_orderings() {
    // Orderings are asymptotic statements; measure them at a horizon where
    // the schedule-driven tails dominate the shared constants.
    let b = base();
    let iterations = 100_000;
    let window = 50_000;
    let mut erg_inner = Vec::new();
    let mut erg_outer = Vec::new();
    let mut best_inner = Vec::new();
    for beta in [0.3, 0.5, 0.7] {
        let cell = run_cell(
            &b.lifted,
            &b.lifted_ref,
            Algorithm::IrePg,
            beta,
            StepRule::Constant,
            iterations,
            false,
            &[window],
        );
        let last = cell.trace.final_point();
        erg_inner.push(last.ergodic_phi_value - b.reference.phi_star);
        erg_outer.push(last.ergodic_omega_value - b.reference.omega_star);
        let best = best_iterate(&cell.trace, window).expect("window");
        best_inner.push(best.phi_value - b.reference.phi_star);
    }
    // Outer rate worsens with beta: terminal ergodic outer gaps increase.
    let outer_increasing = erg_outer[0] < erg_outer[1] && erg_outer[1] < erg_outer[2];
    // On the sub-range where the inner bound's schedule tail improves with
    // beta (up to 1/2), the inner ordering runs opposite to the outer one.
    let inner_opposite = erg_inner[0] > erg_inner[1];
    // Best-iterate inner gap strictly improves as beta increases.
    let best_improves = best_inner[0] > best_inner[1] && best_inner[1] > best_inner[2];
    let pass = outer_increasing && inner_opposite && best_improves;
    report(
        "9",
        pass,
        &format!(
            "ergodic outer {} increasing, ergodic inner {} opposite on the improving range, best-iterate inner {} strictly improving",
            fmt_vec(&erg_outer),
            fmt_vec(&erg_inner),
            fmt_vec(&best_inner)
        ),
    );
}

#[test]
fn criterion_10_coupling_weight_sweep() {
    // Terminal coupling residual strictly decreases as the coupling weight
    // grows, for all three sequence types.
    let rhos = [0.1, 1.0, 10.0];
    let mut by_type: Vec<(&str, Vec<f64>)> = vec![
        ("pg-ergodic", Vec::new()),
        ("pg-best", Vec::new()),
        ("apg-ergodic", Vec::new()),
    ];
    for &rho in &rhos {
        let inst = gen_instance(&spec_with_rho(rho)).expect("instance");
        let lifted = inst.lift().expect("lifting");
        let reference = shared_rho_reference(rho, &inst);
        let lifted_ref = lifted.lift_reference(&reference);
        // Plain ergodic sequence at beta = 1/2.
        let pg = run_cell(
            &lifted,
            &lifted_ref,
            Algorithm::IrePg,
            0.5,
            StepRule::Constant,
            10_000,
            false,
            &[],
        );
        let last = pg.trace.final_point();
        by_type[0]
            .1
            .push(lifted.coupling_residual_norm(&last.ergodic_x));
        // Best-iterate sequence at beta = 2/3.
        let pg_best = run_cell(
            &lifted,
            &lifted_ref,
            Algorithm::IrePg,
            2.0 / 3.0,
            StepRule::Constant,
            10_000,
            false,
            &[5000],
        );
        let best = best_iterate(&pg_best.trace, 5000).expect("window");
        by_type[1].1.push(lifted.coupling_residual_norm(&best.x));
        // Accelerated ergodic sequence at beta = 1.
        let apg = run_cell(
            &lifted,
            &lifted_ref,
            Algorithm::IreApg,
            1.0,
            StepRule::Constant,
            10_000,
            false,
            &[],
        );
        let last = apg.trace.final_point();
        by_type[2]
            .1
            .push(lifted.coupling_residual_norm(&last.ergodic_x));
    }
    let mut pass = true;
    let mut detail = String::new();
    for (name, values) in &by_type {
        let ok = values[0] > values[1] && values[1] > values[2];
        pass &= ok;
        detail.push_str(&format!(" [{name}: {}]", fmt_vec(values)));
    }
    report(
        "10",
        pass,
        &format!("terminal coupling residual strictly decreases over rho = 0.1, 1, 10{detail}"),
    );
}

fn shared_rho_reference(rho: f64, inst: &Instance) -> ReferenceSolution {
    static CACHE: OnceLock<std::sync::Mutex<std::collections::BTreeMap<u64, ReferenceSolution>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| std::sync::Mutex::new(std::collections::BTreeMap::new()));
    let key = rho.to_bits();
    if let Some(r) = cache.lock().unwrap().get(&key) {
        return r.clone();
    }
    let r = if rho == 1.0 {
        base().reference.clone()
    } else {
        reference_solve(inst, &ReferenceOptions::default()).expect("reference")
    };
    cache.lock().unwrap().insert(key, r.clone());
    r
}
