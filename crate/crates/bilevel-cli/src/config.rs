//! Flat JSON run configuration and the sweep-cell enumeration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bilevel::experiments::InstanceSpec;
use bilevel::solver::{Algorithm, Mode, SolverConfig, StepRule};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlgorithmName {
    IrePg,
    IreApg,
}

impl AlgorithmName {
    pub fn to_algorithm(self) -> Algorithm {
        match self {
            AlgorithmName::IrePg => Algorithm::IrePg,
            AlgorithmName::IreApg => Algorithm::IreApg,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AlgorithmName::IrePg => "ire-pg",
            AlgorithmName::IreApg => "ire-apg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRuleName {
    Constant,
    Backtracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    Fast,
    Verify,
}

impl ModeName {
    pub fn to_mode(self) -> Mode {
        match self {
            ModeName::Fast => Mode::Fast,
            ModeName::Verify => Mode::Verify,
        }
    }
}

fn default_gamma() -> f64 {
    0.5
}

fn default_t_bar() -> f64 {
    1.0
}

fn default_mode() -> ModeName {
    ModeName::Fast
}

/// One flat object; arrays declare sweeps. Every `(algorithm, beta, rho,
/// step-rule)` combination becomes a cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub tau: f64,
    pub seed: u64,
    pub rhos: Vec<f64>,
    pub algorithms: Vec<AlgorithmName>,
    pub betas: Vec<f64>,
    pub step_rules: Vec<StepRuleName>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_t_bar")]
    pub t_bar: f64,
    pub iterations: usize,
    #[serde(default = "default_mode")]
    pub mode: ModeName,
    #[serde(default)]
    pub kstar_windows: Vec<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.rhos.is_empty()
            || self.algorithms.is_empty()
            || self.betas.is_empty()
            || self.step_rules.is_empty()
        {
            bail!("sweep lists (rhos, algorithms, betas, step_rules) must be non-empty");
        }
        if self.iterations < 2 {
            bail!(
                "iteration budget must be at least 2 (best-iterate selection needs a 2K window), got {}",
                self.iterations
            );
        }
        for &w in &self.kstar_windows {
            if w == 0 || 2 * w > self.iterations {
                bail!(
                    "best-iterate window {w} needs 2K <= iterations = {}",
                    self.iterations
                );
            }
        }
        // Reject invalid (algorithm, beta) combinations up front so a sweep
        // never dies halfway through.
        for cell in self.cells() {
            cell.solver_config(self)
                .validate()
                .map_err(|e| anyhow::anyhow!("cell {}: {e}", cell.dir_name()))?;
            cell.instance_spec(self)
                .validate()
                .map_err(|e| anyhow::anyhow!("cell {}: {e}", cell.dir_name()))?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &algorithm in &self.algorithms {
            for &beta in &self.betas {
                for &rho in &self.rhos {
                    for &rule in &self.step_rules {
                        cells.push(Cell {
                            algorithm,
                            beta,
                            rho,
                            rule,
                        });
                    }
                }
            }
        }
        cells
    }
}

/// One sweep cell.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Cell {
    pub algorithm: AlgorithmName,
    pub beta: f64,
    pub rho: f64,
    pub rule: StepRuleName,
}

impl Cell {
    pub fn dir_name(&self) -> String {
        let rule = match self.rule {
            StepRuleName::Constant => "constant",
            StepRuleName::Backtracking => "backtracking",
        };
        format!(
            "{}_beta{}_rho{}_{}",
            self.algorithm.as_str(),
            self.beta,
            self.rho,
            rule
        )
    }

    pub fn step_rule(&self, cfg: &RunConfig) -> StepRule {
        match self.rule {
            StepRuleName::Constant => StepRule::Constant,
            StepRuleName::Backtracking => StepRule::Backtracking {
                gamma: cfg.gamma,
                t_bar: cfg.t_bar,
            },
        }
    }

    pub fn solver_config(&self, cfg: &RunConfig) -> SolverConfig {
        let mut sc = SolverConfig::new(
            self.algorithm.to_algorithm(),
            self.beta,
            self.step_rule(cfg),
            cfg.iterations,
        )
        .with_kstar_windows(&cfg.kstar_windows);
        sc.mode = cfg.mode.to_mode();
        sc
    }

    pub fn instance_spec(&self, cfg: &RunConfig) -> InstanceSpec {
        InstanceSpec {
            n: cfg.n,
            tau: cfg.tau,
            seed: cfg.seed,
            rho: self.rho,
        }
    }
}
