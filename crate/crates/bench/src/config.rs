//! Run-configuration schema: a JSON document whose fields mirror the CLI
//! flags. Validation happens before any computation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mbadmm::instances::InstanceRecipe;
use mbadmm::io;
use mbadmm::oracle::OracleSolution;
use mbadmm::problem::ProblemSpec;
use mbadmm::solver::{Mode, SolverConfig};

use crate::{config_err, CliError};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "ADMM_BENCH_OUTPUT_DIR";

/// Per-iteration certificates a run may evaluate. The last five need the
/// sharing structure.
pub const KNOWN_CERTIFICATES: &[&str] = &[
    "dual_exactness",
    "dual_gradient",
    "sufficient_decrease",
    "dual_lipschitz",
    "lower_bound",
    "subgradient_bound",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSel {
    Recipe { recipe: InstanceRecipe },
    Path { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Value(f64),
    Keyword(String),
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Plain,
    Perturbed,
    Scenario2,
}

fn default_max_iter() -> usize {
    1000
}

fn default_inner_tol() -> f64 {
    1e-10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub instance: InstanceSel,
    pub mode: ModeName,
    #[serde(default)]
    pub gamma: GammaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_inner_tol")]
    pub inner_tol: f64,
    /// Seed of the starting point; 0 starts from zeros.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Per-iteration certificates to evaluate and write into the trace.
    #[serde(default)]
    pub certificates: Vec<String>,
    /// Stop tolerance for the combined residual test; 0 disables, absent
    /// uses 1e-8.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tol: Option<f64>,
    /// Treat a run that never meets the stop test as a certificate failure.
    #[serde(default)]
    pub require_convergence: bool,
    /// Solve a reference oracle and emit the ergodic error series.
    #[serde(default)]
    pub compute_oracle: bool,
    /// Write the full per-iteration state file next to the metrics trace.
    #[serde(default = "default_true")]
    pub record_states: bool,
    /// Sweep settings: perturbation scales and the iteration rule constant
    /// `t = ceil(sweep_c / epsilon^2)`.
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep_c: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(config_err)
    }

    /// Materializes the problem (and any oracle stored alongside it).
    pub fn load_instance(&self) -> Result<(ProblemSpec, Option<OracleSolution>), CliError> {
        match &self.instance {
            InstanceSel::Recipe { recipe } => {
                Ok((recipe.build().map_err(config_err)?, None))
            }
            InstanceSel::Path { path } => io::load_problem(path).map_err(config_err),
        }
    }

    /// Resolves `"auto"` gamma: `epsilon` in perturbed mode,
    /// `2 sqrt(2) L` in sharing mode, 1 otherwise.
    pub fn resolve_gamma(&self, prob: &ProblemSpec) -> Result<f64, CliError> {
        match &self.gamma {
            GammaSpec::Value(v) => Ok(*v),
            GammaSpec::Keyword(word) if word == "auto" => Ok(match self.mode {
                ModeName::Perturbed => self
                    .epsilon
                    .ok_or_else(|| config_err("perturbed mode needs `epsilon`"))?,
                ModeName::Scenario2 => {
                    let l = prob.last_block_lipschitz().ok_or_else(|| {
                        config_err("instance lacks a smooth last block; cannot derive gamma")
                    })?;
                    2.0 * 2.0_f64.sqrt() * l.max(f64::MIN_POSITIVE)
                }
                ModeName::Plain => 1.0,
            }),
            GammaSpec::Keyword(other) => {
                Err(config_err(format!("gamma must be a number or \"auto\", got {other:?}")))
            }
        }
    }

    /// Builds and validates the solver configuration for `prob`.
    pub fn solver_config(&self, prob: &ProblemSpec) -> Result<SolverConfig, CliError> {
        let gamma = self.resolve_gamma(prob)?;
        let mode = match self.mode {
            ModeName::Plain => Mode::Plain,
            ModeName::Perturbed => Mode::Perturbed {
                epsilon: self
                    .epsilon
                    .ok_or_else(|| config_err("perturbed mode needs `epsilon`"))?,
            },
            ModeName::Scenario2 => Mode::Scenario2,
        };
        let stop_tol = match self.stop_tol {
            None => Some(1e-8),
            Some(v) if v > 0.0 => Some(v),
            Some(v) if v < 0.0 => {
                return Err(config_err(format!("stop_tol must be >= 0, got {v}")))
            }
            Some(_) => None,
        };
        let cfg = SolverConfig::new(gamma, mode)
            .with_max_iter(self.max_iter)
            .with_inner_tol(self.inner_tol)
            .with_stop_tol(stop_tol);
        cfg.validate(prob).map_err(config_err)?;
        self.validate_certificates(prob)?;
        Ok(cfg)
    }

    fn validate_certificates(&self, prob: &ProblemSpec) -> Result<(), CliError> {
        for name in &self.certificates {
            if !KNOWN_CERTIFICATES.contains(&name.as_str()) {
                return Err(config_err(format!(
                    "unknown certificate {name:?}; known: {KNOWN_CERTIFICATES:?}"
                )));
            }
            let sharing_only = name != "dual_exactness";
            if sharing_only && !(self.mode == ModeName::Scenario2 && prob.scenario2_eligible()) {
                return Err(config_err(format!(
                    "certificate {name:?} needs a scenario2 run on a sharing-structure instance"
                )));
            }
        }
        Ok(())
    }

    /// Output directory after the environment override.
    pub fn output_dir(&self) -> Result<PathBuf, CliError> {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                return Ok(PathBuf::from(dir));
            }
        }
        self.output_dir
            .clone()
            .ok_or_else(|| config_err("no output_dir in config and no environment override"))
    }
}
