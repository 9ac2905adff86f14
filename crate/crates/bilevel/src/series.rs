//! Closed-form bounds on the partial sums `sum_{k=1}^K k^(1-beta)` and the
//! log-weighted tail sum that the rate proofs lean on, checked by direct
//! summation.

/// Outcome of one bound comparison. `margin` is `bound - sum` for upper
/// bounds and `sum - bound` for lower bounds, so nonnegative means pass
/// (up to the stated relative slack).
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub sum: f64,
    pub bound: f64,
    pub margin: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct SumBoundReport {
    pub beta: f64,
    pub k: usize,
    pub upper: BoundCheck,
    /// Absent for `beta > 2`, where no lower bound is claimed.
    pub lower: Option<BoundCheck>,
    pub log_weighted: BoundCheck,
    pub pass: bool,
}

const REL_SLACK: f64 = 1e-12;

fn check_upper(sum: f64, bound: f64) -> BoundCheck {
    let margin = bound - sum;
    BoundCheck {
        sum,
        bound,
        margin,
        pass: sum <= bound + REL_SLACK * bound.abs().max(1.0),
    }
}

fn check_lower(sum: f64, bound: f64) -> BoundCheck {
    let margin = sum - bound;
    BoundCheck {
        sum,
        bound,
        margin,
        pass: sum >= bound - REL_SLACK * bound.abs().max(1.0),
    }
}

/// Direct summation of `sum_{j=1}^k j^(1-beta)`.
pub fn power_sum(beta: f64, k: usize) -> f64 {
    (1..=k).map(|j| (j as f64).powf(1.0 - beta)).sum()
}

/// Verifies the closed-form upper bound, lower bound, and log-weighted bound
/// for the given exponent and horizon.
pub fn sum_bound_check(beta: f64, k: usize) -> SumBoundReport {
    assert!(beta >= 0.0, "exponent must be nonnegative");
    assert!(k >= 1, "horizon must be at least 1");
    let kf = k as f64;
    let sum = power_sum(beta, k);

    let upper_bound = if beta < 2.0 {
        (kf + 1.0).powf(2.0 - beta) / (2.0 - beta)
    } else if beta == 2.0 {
        1.0 + kf.ln()
    } else {
        (beta - 1.0) / (beta - 2.0)
    };
    let upper = check_upper(sum, upper_bound);

    let lower = if beta < 2.0 {
        Some(check_lower(sum, kf.powf(2.0 - beta) / 2.0))
    } else if beta == 2.0 {
        Some(check_lower(sum, (kf + 1.0).ln()))
    } else {
        None
    };

    // sum_{j=1}^{K-1} 2 log(j)/(j+1)^3 + log(K)/(K+1)^2 <= 1
    let log_sum: f64 = (1..k)
        .map(|j| 2.0 * (j as f64).ln() / (j as f64 + 1.0).powi(3))
        .sum::<f64>()
        + kf.ln() / (kf + 1.0).powi(2);
    let log_weighted = check_upper(log_sum, 1.0);

    let pass = upper.pass && lower.is_none_or(|c| c.pass) && log_weighted.pass;
    SumBoundReport {
        beta,
        k,
        upper,
        lower,
        log_weighted,
        pass,
    }
}
