//! Trace CSV emission with a fixed schema.

use bilevel::experiments::ReferenceSolution;
use bilevel::solver::SolverTrace;
use bilevel::surrogate::LiftedProblem;

pub const HEADER: &str =
    "k,sigma,t,phi_gap,omega_gap,erg_phi_gap,erg_omega_gap,coupling_norm,kstar_criterion";

/// Decimal-point float formatting with an `inf`/`-inf`/`nan` spelling for
/// non-finite values; scientific notation outside a readable magnitude band.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Renders one trace: one row per logged iteration, newline-terminated.
pub fn render(
    trace: &SolverTrace,
    lifted: &LiftedProblem,
    reference: &ReferenceSolution,
) -> String {
    let mut out = String::with_capacity(64 * (trace.logged.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for p in &trace.logged {
        let phi_gap = p.phi_value - reference.phi_star;
        let omega_gap = p.omega_value - reference.omega_star;
        let erg_phi_gap = p.ergodic_phi_value - reference.phi_star;
        let erg_omega_gap = p.ergodic_omega_value - reference.omega_star;
        let coupling = lifted.coupling_residual_norm(&p.x);
        let criterion = p.t * phi_gap + p.t * p.sigma * omega_gap;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.k,
            fmt_f64(p.sigma),
            fmt_f64(p.t),
            fmt_f64(phi_gap),
            fmt_f64(omega_gap),
            fmt_f64(erg_phi_gap),
            fmt_f64(erg_omega_gap),
            fmt_f64(coupling),
            fmt_f64(criterion),
        ));
    }
    out
}
