//! Acceptance criterion 11: reproducibility. Two runs of the same config
//! must produce byte-identical trace CSVs, and the solver must agree to
//! 1e-12 with a straight-line reimplementation of the plain iteration
//! written directly against the instance data.

use std::path::PathBuf;
use std::process::Command;

use ndarray::Array1;

use bilevel::experiments::{gen_instance, InstanceSpec};
use bilevel::solver::{solve, Algorithm, SolverConfig, StepRule};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bilevel-cli")
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("bilevel-acc-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn criterion_11_csv_determinism() {
    let dir = temp_dir("det");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "n": 50,
  "tau": 0.1,
  "seed": 7,
  "rhos": [1.0],
  "algorithms": ["ire-pg"],
  "betas": [0.5],
  "step_rules": ["constant"],
  "iterations": 10000,
  "mode": "fast"
}"#,
    )
    .unwrap();

    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        let status = Command::new(bin())
            .args(["run", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "run {run} failed");
        let csv = std::fs::read(out.join("ire-pg_beta0.5_rho1_constant/trace.csv")).unwrap();
        csvs.push(csv);
    }
    let identical = csvs[0] == csvs[1];
    println!(
        "[{}] criterion 11a: trace CSVs from two runs of one config are byte-identical ({} bytes)",
        if identical { "PASS" } else { "FAIL" },
        csvs[0].len()
    );
    assert!(identical);
}

#[test]
fn criterion_11_straight_line_cross_check() {
    // Independent reimplementation of the lifted plain iteration with raw
    // loops: no solver, oracle, or lifting machinery. Shares only the
    // instance data and the declared smoothness constants.
    let spec = InstanceSpec {
        n: 50,
        tau: 0.1,
        seed: 7,
        rho: 1.0,
    };
    let inst = gen_instance(&spec).unwrap();
    let lifted = inst.lift().unwrap();

    let n = spec.n;
    let q = n - 1;
    let beta = 0.5;
    let rho = spec.rho;
    let iterations = 100;

    // Library run, logging every iterate.
    let cfg = SolverConfig::new(Algorithm::IrePg, beta, StepRule::Constant, iterations)
        .log_every_iteration();
    let w0 = lifted.lift_point(&Array1::zeros(n));
    let trace = solve(&lifted.lifted, &cfg, &w0, None).unwrap();
    assert_eq!(trace.logged.len(), iterations);

    // Straight-line version.
    let a: Vec<Vec<f64>> = (0..n / 2)
        .map(|i| (0..n).map(|j| inst.a[[i, j]]).collect())
        .collect();
    let y: Vec<f64> = inst.y.to_vec();
    let tau = spec.tau;
    let l_lifted = lifted.lifted.l2(); // declared smoothness of the lifted smooth part
    let mut x = vec![0.0f64; n];
    let mut p = vec![0.0f64; q];

    let mut worst = 0.0f64;
    for k in 1..=iterations {
        let sigma = (k as f64).powf(-beta);
        let t = 1.0 / l_lifted; // the lifted outer function has no smooth part

        // ax = A x
        let mut ax = vec![0.0f64; n / 2];
        for (i, row) in a.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * x[j];
            }
            ax[i] = acc;
        }
        // residual of the projection of ax onto the ball B(y, tau)
        let mut diff = vec![0.0f64; n / 2];
        let mut dist_sq = 0.0;
        for i in 0..n / 2 {
            diff[i] = ax[i] - y[i];
            dist_sq += diff[i] * diff[i];
        }
        let dist = dist_sq.sqrt();
        let mut resid = vec![0.0f64; n / 2];
        if dist > tau {
            let scale = tau / dist;
            for i in 0..n / 2 {
                // ax - (y + scale * (ax - y))
                resid[i] = ax[i] - (y[i] + scale * diff[i]);
            }
        }
        // grad_x = A^T resid + rho * S^T (S x - p); S is the difference matrix
        let mut sx = vec![0.0f64; q];
        for i in 0..q {
            sx[i] = x[i + 1] - x[i];
        }
        let mut c = vec![0.0f64; q];
        for i in 0..q {
            c[i] = sx[i] - p[i];
        }
        let mut gx = vec![0.0f64; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n / 2 {
                acc += a[i][j] * resid[i];
            }
            gx[j] = acc;
        }
        for j in 0..n {
            // (S^T c)_j = c_{j-1} - c_j with out-of-range terms zero
            let st = if j == 0 {
                -c[0]
            } else if j == n - 1 {
                c[n - 2]
            } else {
                c[j - 1] - c[j]
            };
            gx[j] += rho * st;
        }
        // prox step: clamp the x block, soft-threshold the p block
        for j in 0..n {
            let v = x[j] - t * gx[j];
            x[j] = v.clamp(-1.0, 1.0);
        }
        let lam = t * sigma;
        for i in 0..q {
            let v = p[i] - t * (-rho * c[i]);
            p[i] = v.signum() * (v.abs() - lam).max(0.0);
        }

        let logged = &trace.logged[k - 1];
        assert_eq!(logged.k, k);
        for j in 0..n {
            worst = worst.max((logged.x[j] - x[j]).abs());
        }
        for i in 0..q {
            worst = worst.max((logged.x[n + i] - p[i]).abs());
        }
    }
    let pass = worst <= 1e-12;
    println!(
        "[{}] criterion 11b: straight-line reimplementation agrees over {iterations} iterations (worst deviation {worst:.2e})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}
