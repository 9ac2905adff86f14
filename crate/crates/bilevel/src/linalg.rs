//! Dense linear-algebra helpers: norms, the forward-difference matrix, and
//! spectral-norm estimation by power iteration.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::{Error, Result};

pub fn norm2(x: &Array1<f64>) -> f64 {
    x.dot(x).sqrt()
}

pub fn dist2(x: &Array1<f64>, y: &Array1<f64>) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let d = a - b;
        acc += d * d;
    }
    acc.sqrt()
}

/// Forward-difference matrix with rows `e_{i+1} - e_i`, shape `(n-1, n)`.
/// Composing it with the l1 norm penalizes jumps in a signal.
pub fn forward_difference_matrix(n: usize) -> Array2<f64> {
    let mut s = Array2::zeros((n - 1, n));
    for i in 0..n - 1 {
        s[[i, i]] = -1.0;
        s[[i, i + 1]] = 1.0;
    }
    s
}

/// Power-iteration settings; the defaults are used everywhere in the crate.
pub struct PowerIteration {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub seed: u64,
}

impl Default for PowerIteration {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            rel_tolerance: 1e-10,
            seed: 0x5eed,
        }
    }
}

/// Largest singular value of `a`, estimated by power iteration on `AᵀA`
/// with a deterministic pseudo-random start vector.
pub fn operator_norm(a: &Array2<f64>) -> Result<f64> {
    operator_norm_with(a, &PowerIteration::default())
}

pub fn operator_norm_with(a: &Array2<f64>, opts: &PowerIteration) -> Result<f64> {
    if a.iter().all(|v| *v == 0.0) {
        return Err(Error::InvalidConfig(
            "operator norm of the zero matrix is not estimated".into(),
        ));
    }
    let n = a.ncols();
    let mut rng = crate::rng::substream(opts.seed, "power-iteration");
    let mut v = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
    let mut v_norm = norm2(&v);
    if v_norm == 0.0 {
        v[0] = 1.0;
        v_norm = 1.0;
    }
    v.mapv_inplace(|x| x / v_norm);

    let mut rayleigh = f64::NAN;
    for _ in 0..opts.max_iterations {
        let av = a.dot(&v);
        // Rayleigh quotient of AᵀA at the unit vector v.
        let next = av.dot(&av);
        let mut w = av.dot(a); // Aᵀ(Av)
        let w_norm = norm2(&w);
        if w_norm == 0.0 {
            // v fell in the null space; restart from a fresh direction.
            v = Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0));
            let nv = norm2(&v);
            v.mapv_inplace(|x| x / nv);
            continue;
        }
        w.mapv_inplace(|x| x / w_norm);
        let converged =
            rayleigh.is_finite() && (next - rayleigh).abs() <= opts.rel_tolerance * next;
        rayleigh = next;
        v = w;
        if converged {
            return Ok(rayleigh.sqrt());
        }
    }
    Err(Error::PowerIterationStalled {
        iterations: opts.max_iterations,
        last_estimate: rayleigh.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// One-sided Jacobi singular values, used only as an independent oracle.
    fn jacobi_singular_values(a: &Array2<f64>) -> Vec<f64> {
        // Work on the tall orientation so columns are what gets orthogonalized.
        let mut m = if a.nrows() >= a.ncols() {
            a.clone()
        } else {
            a.t().to_owned()
        };
        let n = m.ncols();
        for _sweep in 0..60 {
            let mut off = 0.0f64;
            for p in 0..n {
                for q in (p + 1)..n {
                    let cp = m.column(p).to_owned();
                    let cq = m.column(q).to_owned();
                    let app = cp.dot(&cp);
                    let aqq = cq.dot(&cq);
                    let apq = cp.dot(&cq);
                    off = off.max(apq.abs());
                    if apq.abs() <= 1e-15 * (app * aqq).sqrt().max(1e-300) {
                        continue;
                    }
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m.nrows() {
                        let vp = m[[i, p]];
                        let vq = m[[i, q]];
                        m[[i, p]] = c * vp - s * vq;
                        m[[i, q]] = s * vp + c * vq;
                    }
                }
            }
            if off < 1e-14 {
                break;
            }
        }
        let mut sv: Vec<f64> = (0..n).map(|j| norm2(&m.column(j).to_owned())).collect();
        sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
        sv
    }

    #[test]
    fn identity_has_unit_norm() {
        let eye = Array2::eye(3);
        assert!((operator_norm(&eye).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn diagonal_norm_is_largest_entry() {
        let d = array![[3.0, 0.0], [0.0, 1.0]];
        assert!((operator_norm(&d).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn random_matrix_matches_jacobi_oracle() {
        let mut rng = crate::rng::stream(42);
        let a = Array2::from_shape_fn((8, 12), |_| rng.random_range(-1.0..1.0));
        let expected = jacobi_singular_values(&a)[0];
        let got = operator_norm(&a).unwrap();
        assert!(
            (got - expected).abs() <= 1e-8 * expected,
            "power iteration {got} vs jacobi {expected}"
        );
    }

    #[test]
    fn exhausted_iteration_budget_reports_the_last_estimate() {
        let mut rng = crate::rng::stream(77);
        let a = Array2::from_shape_fn((6, 6), |_| rng.random_range(-1.0..1.0));
        let opts = PowerIteration {
            max_iterations: 1,
            ..PowerIteration::default()
        };
        match operator_norm_with(&a, &opts) {
            Err(Error::PowerIterationStalled { last_estimate, .. }) => {
                assert!(last_estimate.is_finite() && last_estimate > 0.0)
            }
            other => panic!("expected stalled power iteration, got {other:?}"),
        }
    }

    #[test]
    fn zero_matrix_is_rejected() {
        let z = Array2::zeros((2, 2));
        assert!(matches!(operator_norm(&z), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn forward_difference_applies_jumps() {
        let s = forward_difference_matrix(4);
        let x = array![-0.5, -0.5, 0.5, 0.5];
        let sx = s.dot(&x);
        assert_eq!(sx, array![0.0, 1.0, 0.0]);
    }
}
