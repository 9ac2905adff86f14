//! Least-squares slope of log(gap) against log(k), used to report observed
//! convergence exponents.

#[derive(Debug, Clone)]
pub struct SlopeResult {
    pub slope: f64,
    pub used_points: usize,
    /// Points dropped because the gap was nonpositive or non-finite.
    pub truncated: usize,
}

/// Fits `log(gap) ~ intercept + slope * log(k)` over `(k, gap)` pairs with
/// `k` in `[k_min, k_max]`. Needs at least five usable points.
pub fn slope_estimate(
    points: &[(usize, f64)],
    k_min: usize,
    k_max: usize,
) -> Result<SlopeResult, String> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut truncated = 0usize;
    for &(k, gap) in points {
        if k < k_min || k > k_max {
            continue;
        }
        if !(gap.is_finite() && gap > 0.0) {
            truncated += 1;
            continue;
        }
        xs.push((k as f64).ln());
        ys.push(gap.ln());
    }
    if xs.len() < 5 {
        return Err(format!(
            "slope needs at least 5 positive finite gaps in [{k_min}, {k_max}], found {} ({} truncated)",
            xs.len(),
            truncated
        ));
    }
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys.iter()) {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err("all points share one abscissa".into());
    }
    Ok(SlopeResult {
        slope: sxy / sxx,
        used_points: xs.len(),
        truncated,
    })
}
