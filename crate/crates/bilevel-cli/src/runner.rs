//! Per-cell experiment pipeline: generate, lift, reference-solve (cached),
//! run the solver, and emit artifacts plus the verification report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use ndarray::Array1;
use serde::{Deserialize, Serialize};

use bilevel::experiments::{
    gen_instance, reference_solve, write_instance_text, Instance, InstanceSpec, ReferenceOptions,
    ReferenceSolution,
};
use bilevel::model::validate;
use bilevel::solver::{check_rate_bounds, solve, SolverTrace};
use bilevel::surrogate::{translate_rates, LiftedProblem, RealValued};
use bilevel::Error as BilevelError;

use crate::config::{Cell, ModeName, RunConfig};
use crate::report::{CellReport, InstanceReport, ReportCheck, SlopeReport, SummaryEntry};
use crate::slope::slope_estimate;
use crate::{csv, svg};

/// Directory for cached reference solutions under the output root.
const ORACLE_CACHE_DIR: &str = "oracle-cache";

#[derive(Serialize, Deserialize)]
struct ReferenceFile {
    x_star: Vec<f64>,
    phi_star: f64,
    omega_star: f64,
    omega_lower: f64,
    method: String,
    achieved_tol: f64,
    omega_uncertainty: f64,
    confident: bool,
}

impl From<&ReferenceSolution> for ReferenceFile {
    fn from(r: &ReferenceSolution) -> Self {
        Self {
            x_star: r.x_star.to_vec(),
            phi_star: r.phi_star,
            omega_star: r.omega_star,
            omega_lower: r.omega_lower,
            method: r.method.clone(),
            achieved_tol: r.achieved_tol,
            omega_uncertainty: r.omega_uncertainty,
            confident: r.confident,
        }
    }
}

impl From<ReferenceFile> for ReferenceSolution {
    fn from(f: ReferenceFile) -> Self {
        ReferenceSolution {
            x_star: Array1::from_vec(f.x_star),
            phi_star: f.phi_star,
            omega_star: f.omega_star,
            omega_lower: f.omega_lower,
            method: f.method,
            achieved_tol: f.achieved_tol,
            omega_uncertainty: f.omega_uncertainty,
            confident: f.confident,
        }
    }
}

fn cache_key(spec: &InstanceSpec) -> String {
    format!(
        "ref-n{}-tau{}-seed{}-rho{}-v1.json",
        spec.n, spec.tau, spec.seed, spec.rho
    )
}

/// Loads the cached reference for an instance or computes and stores it.
pub fn cached_reference(out_dir: &Path, inst: &Instance) -> anyhow::Result<ReferenceSolution> {
    let dir = out_dir.join(ORACLE_CACHE_DIR);
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(cache_key(&inst.spec));
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(file) = serde_json::from_str::<ReferenceFile>(&text) {
            return Ok(file.into());
        }
        // Unreadable cache entries are recomputed below.
    }
    let reference = reference_solve(inst, &ReferenceOptions::default())
        .map_err(|e| anyhow::anyhow!("reference oracle failed: {e}"))?;
    let file = ReferenceFile::from(&reference);
    std::fs::write(&path, serde_json::to_string_pretty(&file)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(reference)
}

pub fn oracle_cache_path(out_dir: &Path, spec: &InstanceSpec) -> PathBuf {
    out_dir.join(ORACLE_CACHE_DIR).join(cache_key(spec))
}

/// Outcome of one cell, reduced to what the exit code needs.
pub struct CellOutcome {
    pub cell: String,
    pub pass: bool,
    pub numeric_failure: Option<String>,
}

pub struct RunOutcome {
    pub cells: Vec<CellOutcome>,
}

impl RunOutcome {
    pub fn all_pass(&self) -> bool {
        self.cells.iter().all(|c| c.pass)
    }

    pub fn any_numeric_failure(&self) -> bool {
        self.cells.iter().any(|c| c.numeric_failure.is_some())
    }
}

/// Resolves the output directory: explicit flag, then config, then the
/// `BILEVEL_OUT_DIR` environment variable, then `./bilevel-out`.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.out_dir {
        return p.clone();
    }
    if let Ok(env) = std::env::var("BILEVEL_OUT_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("bilevel-out")
}

/// Runs every cell of the sweep, `jobs` at a time, writing artifacts under
/// `out_dir/<cell>/`.
pub fn run_all(
    cfg: &RunConfig,
    out_dir: &Path,
    jobs: usize,
    write_artifacts: bool,
    quiet: bool,
) -> anyhow::Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let cells = cfg.cells();

    // References are shared between cells of one instance; compute them
    // sequentially up front so parallel cells only read.
    let mut references: BTreeMap<String, ReferenceSolution> = BTreeMap::new();
    for cell in &cells {
        let spec = cell.instance_spec(cfg);
        if let std::collections::btree_map::Entry::Vacant(slot) = references.entry(cache_key(&spec))
        {
            let inst = gen_instance(&spec).map_err(|e| anyhow::anyhow!("{e}"))?;
            slot.insert(cached_reference(out_dir, &inst)?);
        }
    }

    let jobs = jobs.max(1).min(cells.len().max(1));
    let queue = Mutex::new(cells.iter().cloned().enumerate().collect::<Vec<_>>());
    let results: Mutex<Vec<(usize, anyhow::Result<CellOutcome>)>> = Mutex::new(Vec::new());

    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let next = queue.lock().unwrap().pop();
                let Some((idx, cell)) = next else { break };
                let spec = cell.instance_spec(cfg);
                let reference = references[&cache_key(&spec)].clone();
                let outcome = run_cell(cfg, &cell, &reference, out_dir, write_artifacts);
                results.lock().unwrap().push((idx, outcome));
            });
        }
    });

    let mut collected = results.into_inner().unwrap();
    collected.sort_by_key(|(idx, _)| *idx);
    let mut outcomes = Vec::new();
    for (_, res) in collected {
        let outcome = res?;
        if !quiet {
            let status = if outcome.pass { "PASS" } else { "FAIL" };
            match &outcome.numeric_failure {
                Some(msg) => println!("[{status}] {} (numeric failure: {msg})", outcome.cell),
                None => println!("[{status}] {}", outcome.cell),
            }
        }
        outcomes.push(outcome);
    }

    if write_artifacts {
        let summary: Vec<SummaryEntry> = outcomes
            .iter()
            .map(|o| SummaryEntry {
                cell: o.cell.clone(),
                pass: o.pass,
                failure: o.numeric_failure.clone(),
            })
            .collect();
        std::fs::write(
            out_dir.join("summary.json"),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }

    Ok(RunOutcome { cells: outcomes })
}

fn run_cell(
    cfg: &RunConfig,
    cell: &Cell,
    reference: &ReferenceSolution,
    out_dir: &Path,
    write_artifacts: bool,
) -> anyhow::Result<CellOutcome> {
    let spec = cell.instance_spec(cfg);
    let inst = gen_instance(&spec).map_err(|e| anyhow::anyhow!("{e}"))?;
    let lifted = inst.lift().map_err(|e| anyhow::anyhow!("{e}"))?;
    let lifted_ref = lifted.lift_reference(reference);

    let solver_cfg = cell.solver_config(cfg);
    let x0 = Array1::zeros(spec.n);
    let w0 = lifted.lift_point(&x0);

    let (trace, failure) = match solve(&lifted.lifted, &solver_cfg, &w0, Some(&lifted_ref)) {
        Ok(trace) => (trace, None),
        Err(BilevelError::NumericFailure { k, trace }) => {
            (*trace, Some(format!("non-finite iterate at k = {k}")))
        }
        Err(e) => return Err(anyhow::anyhow!("cell {}: {e}", cell.dir_name())),
    };

    let mut checks = Vec::new();

    // Oracle self-consistency on the lifted problem.
    let probes = match cfg.mode {
        ModeName::Verify => 1000,
        ModeName::Fast => 200,
    };
    let validation = validate(&lifted.lifted, probes);
    for c in &validation.checks {
        checks.push(ReportCheck::new(
            "model",
            format!("oracle.{}", c.name),
            None,
            c.worst_margin,
            c.pass,
        ));
    }

    // Per-iteration inequality aggregates (verify mode).
    for inv in &trace.invariants {
        checks.push(
            ReportCheck::new(
                "solver",
                format!("invariant.{}", inv.name),
                Some(inv.worst_k),
                inv.worst_slack,
                inv.pass,
            )
            .with_note(format!(
                "worst over {} iterations; tolerance {:.1e}",
                inv.evaluations, inv.neg_tolerance
            )),
        );
    }

    // Explicit rate bounds at the logged iterations.
    let rate_report = check_rate_bounds(&lifted.lifted, &trace)
        .map_err(|e| anyhow::anyhow!("rate bounds: {e}"))?;
    for c in &rate_report.checks {
        checks.push(
            ReportCheck::new(
                "solver",
                format!("rate.{}", c.name),
                Some(c.k),
                c.margin,
                c.pass,
            )
            .with_value_bound(c.gap, c.bound),
        );
    }

    // Surrogate-to-original translation (the outer function here is the
    // real-valued jump penalty).
    let translation = translate_rates(&lifted, &trace, RealValued::Outer)
        .map_err(|e| anyhow::anyhow!("translation: {e}"))?;
    for c in &translation.checks {
        checks.push(
            ReportCheck::new(
                "surrogate",
                format!("translate.{}", c.name),
                Some(c.k),
                c.margin,
                c.pass,
            )
            .with_value_bound(c.lhs, c.rhs),
        );
    }
    if let Some(consistent) = translation.translation_consistent {
        let ell = translation.lipschitz_estimate.unwrap_or(f64::NAN);
        checks.push(
            ReportCheck::new("surrogate", "translate.real_valued_outer_consistent", None, 0.0, true)
                .with_note(format!(
                    "consistent with empirical Lipschitz estimate {ell:.3e}: {consistent} (reported, not asserted)"
                )),
        );
    }

    // Observed convergence exponents over the trailing decades.
    let k_max = trace.logged.last().map(|p| p.k).unwrap_or(1);
    let k_min = (k_max / 100).max(2);
    let mut slopes = BTreeMap::new();
    let gap_series = |f: &dyn Fn(&bilevel::solver::LoggedPoint) -> f64| -> Vec<(usize, f64)> {
        trace.logged.iter().map(|p| (p.k, f(p))).collect()
    };
    let series: [(&str, Vec<(usize, f64)>); 4] = [
        (
            "iterate_inner",
            gap_series(&|p| p.phi_value - reference.phi_star),
        ),
        (
            "iterate_outer",
            gap_series(&|p| p.omega_value - reference.omega_star),
        ),
        (
            "ergodic_inner",
            gap_series(&|p| p.ergodic_phi_value - reference.phi_star),
        ),
        (
            "ergodic_outer",
            gap_series(&|p| p.ergodic_omega_value - reference.omega_star),
        ),
    ];
    for (name, pts) in series {
        let entry = match slope_estimate(&pts, k_min, k_max) {
            Ok(r) => SlopeReport {
                slope: Some(r.slope),
                used_points: r.used_points,
                truncated: r.truncated,
                note: String::new(),
            },
            Err(msg) => SlopeReport {
                slope: None,
                used_points: 0,
                truncated: 0,
                note: msg,
            },
        };
        slopes.insert(name.to_string(), entry);
    }

    let pass = failure.is_none() && checks.iter().all(|c| c.pass);

    if write_artifacts {
        let dir = out_dir.join(cell.dir_name());
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("instance.txt"), write_instance_text(&inst))?;
        std::fs::write(
            dir.join("trace.csv"),
            csv::render(&trace, &lifted, reference),
        )?;
        std::fs::write(
            dir.join("plot.svg"),
            render_plot(cell, &trace, &lifted, reference, &rate_report),
        )?;
        let report = CellReport {
            cell: serde_json::json!({
                "algorithm": cell.algorithm.as_str(),
                "beta": cell.beta,
                "rho": cell.rho,
                "step_rule": match cell.rule {
                    crate::config::StepRuleName::Constant => "constant".to_string(),
                    crate::config::StepRuleName::Backtracking =>
                        format!("backtracking(gamma={}, t_bar={})", cfg.gamma, cfg.t_bar),
                },
                "iterations": cfg.iterations,
                "mode": match cfg.mode { ModeName::Fast => "fast", ModeName::Verify => "verify" },
            }),
            instance: InstanceReport {
                n: spec.n,
                tau: spec.tau,
                seed: spec.seed,
                rho: spec.rho,
            },
            reference: reference.into(),
            checks,
            slopes,
            failure: failure.clone(),
            pass,
        };
        std::fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
    } else {
        for c in checks.iter().filter(|c| !c.pass) {
            println!(
                "  [FAIL] {} {}::{} margin {:?}",
                cell.dir_name(),
                c.module,
                c.tag,
                c.margin
            );
        }
    }

    Ok(CellOutcome {
        cell: cell.dir_name(),
        pass,
        numeric_failure: failure,
    })
}

fn render_plot(
    cell: &Cell,
    trace: &SolverTrace,
    lifted: &LiftedProblem,
    reference: &ReferenceSolution,
    rate_report: &bilevel::solver::RateBoundReport,
) -> String {
    let mut series = Vec::new();
    let pts = |f: &dyn Fn(&bilevel::solver::LoggedPoint) -> f64| -> Vec<(f64, f64)> {
        trace.logged.iter().map(|p| (p.k as f64, f(p))).collect()
    };
    series.push(svg::Series {
        name: "inner gap".into(),
        dashed: false,
        points: pts(&|p| p.phi_value - reference.phi_star),
    });
    series.push(svg::Series {
        name: "outer gap".into(),
        dashed: false,
        points: pts(&|p| p.omega_value - reference.omega_star),
    });
    series.push(svg::Series {
        name: "ergodic inner gap".into(),
        dashed: false,
        points: pts(&|p| p.ergodic_phi_value - reference.phi_star),
    });
    series.push(svg::Series {
        name: "ergodic outer gap".into(),
        dashed: false,
        points: pts(&|p| p.ergodic_omega_value - reference.omega_star),
    });
    series.push(svg::Series {
        name: "coupling norm".into(),
        dashed: false,
        points: trace
            .logged
            .iter()
            .map(|p| (p.k as f64, lifted.coupling_residual_norm(&p.x)))
            .collect(),
    });
    // Dashed overlays: the guaranteed ergodic bounds (and the per-iterate
    // inner bound for the accelerated solver).
    for (tag, label) in [
        ("pg_ergodic_outer", "outer bound"),
        ("pg_ergodic_inner", "inner bound"),
        ("apg_ergodic_outer", "outer bound"),
        ("apg_ergodic_inner", "inner bound"),
        ("apg_iterate_inner", "iterate inner bound"),
    ] {
        let points: Vec<(f64, f64)> = rate_report
            .named(tag)
            .map(|c| (c.k as f64, c.bound))
            .collect();
        if !points.is_empty() {
            series.push(svg::Series {
                name: label.into(),
                dashed: true,
                points,
            });
        }
    }
    svg::render(&cell.dir_name(), &series)
}
