//! Strict JSON run configuration.

use std::fs;
use std::path::Path;

use ballvi_core::audit::DEFAULT_AUDIT_SLACK;
use ballvi_core::{PenRunConfig, PenaltyParams, Problem, Scenario, ScenarioSpec, ViRunConfig};
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub solver: SolverSection,
    pub study: Option<StudySection>,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySection {
    pub epsilon: Option<f64>,
    #[serde(default = "default_delta0")]
    pub delta0: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            epsilon: None,
            delta0: default_delta0(),
        }
    }
}

fn default_delta0() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    /// Defaults to `T / 200`.
    pub tau: Option<f64>,
    pub fixed_point_tol: Option<f64>,
    pub pgs_tol: Option<f64>,
    pub theta: Option<f64>,
    /// Newton iteration budget per step.
    pub max_iters: Option<usize>,
    pub pgs_max_sweeps: Option<usize>,
    pub contact_tol: Option<f64>,
    pub cg_tol: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    #[serde(rename = "type")]
    pub kind: String,
    pub eps_list: Option<Vec<f64>>,
    pub n_list: Option<Vec<f64>>,
    pub p_list: Option<Vec<f64>>,
    pub perturbation: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    #[serde(default = "default_p_list")]
    pub p_list: Vec<f64>,
    #[serde(default = "default_slack")]
    pub slack: f64,
}

impl Default for AuditSection {
    fn default() -> Self {
        Self {
            p_list: default_p_list(),
            slack: default_slack(),
        }
    }
}

fn default_p_list() -> Vec<f64> {
    vec![2.0, 4.0]
}

fn default_slack() -> f64 {
    DEFAULT_AUDIT_SLACK
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            snapshot_stride: default_stride(),
        }
    }
}

fn default_stride() -> usize {
    1
}

/// Configuration problem; the message names the offending key or path.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn problem(&self) -> Result<Problem, ConfigError> {
        let scenario = Scenario::new(self.scenario.clone()).map_err(|e| ConfigError(format!("scenario: {e}")))?;
        let tau = self.solver.tau.unwrap_or(scenario.horizon() / 200.0);
        Problem::new(scenario, tau).map_err(|e| ConfigError(format!("scenario/solver.tau: {e}")))
    }

    fn check_positive(name: &str, v: Option<f64>) -> Result<(), ConfigError> {
        match v {
            Some(x) if !(x > 0.0 && x.is_finite()) => err(format!("{name}: must be positive, got {x}")),
            _ => Ok(()),
        }
    }

    /// Penalized-run settings; `epsilon` falls back to `penalty.epsilon`.
    pub fn pen_config(&self, problem: &Problem, epsilon: Option<f64>) -> Result<PenRunConfig, ConfigError> {
        let Some(eps) = epsilon.or(self.penalty.epsilon) else {
            return err("penalty.epsilon: required for run-pen");
        };
        let penalty = PenaltyParams::new(eps, problem.delta(), self.penalty.delta0)
            .map_err(|e| ConfigError(format!("penalty: {e}")))?;
        Self::check_positive("solver.fixed_point_tol", self.solver.fixed_point_tol)?;
        Self::check_positive("solver.cg_tol", self.solver.cg_tol)?;
        let mut cfg = PenRunConfig::new(penalty, problem.tau);
        if let Some(v) = self.solver.fixed_point_tol {
            cfg.fixed_point_tol = v;
        }
        if let Some(v) = self.solver.max_iters {
            cfg.fixed_point_max = v;
        }
        if let Some(v) = self.solver.theta {
            cfg.theta = v;
        }
        if let Some(v) = self.solver.cg_tol {
            cfg.cg_tol = v;
        }
        if self.solver.max_iters == Some(0) {
            return err("solver.max_iters: must be at least 1");
        }
        if !(cfg.theta > 0.0 && cfg.theta <= 1.0) {
            return err(format!("solver.theta: must lie in (0, 1], got {}", cfg.theta));
        }
        Ok(cfg)
    }

    pub fn vi_config(&self, problem: &Problem) -> Result<ViRunConfig, ConfigError> {
        Self::check_positive("solver.pgs_tol", self.solver.pgs_tol)?;
        Self::check_positive("solver.contact_tol", self.solver.contact_tol)?;
        let mut cfg = ViRunConfig::new(problem.delta(), problem.tau);
        if let Some(v) = self.solver.pgs_tol {
            cfg.pgs_tol = v;
        }
        if let Some(v) = self.solver.pgs_max_sweeps {
            if v == 0 {
                return err("solver.pgs_max_sweeps: must be at least 1");
            }
            cfg.pgs_max_sweeps = v;
        }
        if let Some(v) = self.solver.contact_tol {
            cfg.contact_tol = v;
        }
        Ok(cfg)
    }

    pub fn audit_params(&self, p_list: Option<&Vec<f64>>) -> Result<(Vec<f64>, f64), ConfigError> {
        let p_list = p_list.cloned().unwrap_or_else(|| self.audit.p_list.clone());
        if let Some(p) = p_list.iter().find(|p| !(**p >= 1.0 && p.is_finite())) {
            return err(format!("p_list: entries must be finite and >= 1, got {p}"));
        }
        if !(self.audit.slack >= 0.0 && self.audit.slack.is_finite()) {
            return err(format!("audit.slack: must be >= 0, got {}", self.audit.slack));
        }
        if self.output.snapshot_stride == 0 {
            return err("output.snapshot_stride: must be at least 1");
        }
        Ok((p_list, self.audit.slack))
    }
}
